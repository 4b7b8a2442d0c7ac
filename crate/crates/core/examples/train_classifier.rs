//! Train each architecture on a generated corpus, report held-out accuracy,
//! and round-trip the model through its file format.
//!
//!     cargo run --release --example train_classifier [corpus-seed]

use teeguard::audio::{CorpusGenerator, GeneratorConfig};
use teeguard::classifier::io::{read_model, write_model};
use teeguard::classifier::{
    classify, train, Architecture, TrainConfig, Transcript, DEFAULT_THRESHOLD,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(7);
    let corpus = CorpusGenerator::new(GeneratorConfig::default(), seed).corpus(1000);
    let (train_set, test_set) = corpus.split_at(800);

    for arch in [
        Architecture::Cnn,
        Architecture::Attention,
        Architecture::Hybrid,
    ] {
        let cfg = TrainConfig {
            architecture: arch,
            ..TrainConfig::default()
        };
        let started = std::time::Instant::now();
        let (clf, history) = train(&cfg, train_set)?;
        println!(
            "{arch:<9} loss {:.4} -> {:.4}  train {:.3}  test {:.3}  ({:.1?})",
            history[0],
            history.last().unwrap(),
            clf.accuracy(train_set, DEFAULT_THRESHOLD),
            clf.accuracy(test_set, DEFAULT_THRESHOLD),
            started.elapsed()
        );

        let bytes = write_model(&clf);
        let loaded = read_model(&bytes)?;
        for text in ["what is the weather today", "my bank pin is 4821"] {
            let v = classify(
                &loaded,
                &Transcript::new(text, &loaded.vocab),
                DEFAULT_THRESHOLD,
            );
            println!("    {:.3} {:<9} {text:?}", v.score, v.label.as_str());
        }
    }
    Ok(())
}

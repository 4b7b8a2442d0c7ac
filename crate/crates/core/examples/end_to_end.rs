//! The whole pipeline against a mock cloud, with a learned classifier.
//!
//!     cargo run --release --example end_to_end [path/to/pipeline.toml]

use teeguard::classifier::Architecture;
use teeguard::pipeline::{run_pipeline_report, ClassifierKind, PipelineConfig};
use teeguard::relay::MockCloud;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match std::env::args().nth(1) {
        Some(p) => PipelineConfig::load(p.as_ref())?,
        None => {
            let mut c = PipelineConfig::default();
            c.classifier.kind = ClassifierKind::Learned(Architecture::Cnn);
            c
        }
    };
    let cloud = MockCloud::serve("127.0.0.1:0")?;
    cfg.endpoint = cloud.local_addr().to_string();

    let report = run_pipeline_report(&cfg)?;
    println!("{}", report.metrics.without_latency().to_json());
    let mut lat = report.metrics.latency_us.clone();
    lat.sort_unstable();
    if let (Some(max), Some(mid)) = (lat.last(), lat.get(lat.len() / 2)) {
        println!("latency median {mid} us, max {max} us");
    }
    let log = report.redaction_log.render();
    println!("first redaction records:");
    log.lines().take(8).for_each(|l| println!("  {l}"));

    let received = cloud.shutdown();
    println!("cloud received {} packets; first few:", received.len());
    for p in received.iter().take(5) {
        println!(
            "  {:>3} {}",
            p.sequence,
            String::from_utf8_lossy(&p.payload)
        );
    }
    Ok(())
}

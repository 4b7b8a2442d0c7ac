//! Model and corpus files.
//!
//! Model file (all integers u32 LE, floats f64 LE):
//!
//! ```text
//! "TGM1" ‖ arch tag ‖ V ‖ d ‖ F ‖ w ‖ parameters… ‖ vocab
//! vocab = count ‖ (len ‖ UTF-8 bytes) × count      // words for indices 1..V
//! ```
//!
//! Parameters follow each model's declared field order. Corpus files hold one
//! `label<TAB>text` example per line.

use std::fmt::Write as _;

use super::{
    AnyModel, Architecture, AttentionEncoder, ClassifierError, CnnModel, HybridModel, Model,
    TrainedClassifier, Vocab,
};
use crate::audio::Label;

pub const MODEL_MAGIC: [u8; 4] = *b"TGM1";

fn bad(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::BadModelFile(msg.into())
}

pub fn write_model(c: &TrainedClassifier) -> Vec<u8> {
    let dims = c.model.dims();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    for v in [
        c.model.architecture().tag(),
        dims.vocab as u32,
        dims.d as u32,
        dims.filters as u32,
        dims.width as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for block in c.model.params() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(c.vocab.words().len() as u32).to_le_bytes());
    for w in c.vocab.words() {
        out.extend_from_slice(&(w.len() as u32).to_le_bytes());
        out.extend_from_slice(w.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<(), ClassifierError> {
        for v in dst {
            *v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        }
        Ok(())
    }
}

fn load_params<M: Model>(mut m: M, r: &mut Reader<'_>) -> Result<M, ClassifierError> {
    for block in m.params_mut() {
        r.fill(block)?;
    }
    Ok(m)
}

pub fn read_model(bytes: &[u8]) -> Result<TrainedClassifier, ClassifierError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let tag = r.u32()?;
    let arch = Architecture::from_tag(tag)
        .ok_or_else(|| bad(format!("unknown architecture tag {tag}")))?;
    let [v, d, f, w] = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|x| x as usize);
    // Bound allocation by what the file can actually hold.
    let budget = bytes.len() / 8 + 1;
    let embed = v.saturating_mul(d);
    let conv = f.saturating_mul(w).saturating_mul(d);
    let attn = d.saturating_mul(d).saturating_mul(3).saturating_add(d);
    let needed = match arch {
        Architecture::Cnn => embed.saturating_add(conv).saturating_add(f),
        Architecture::Attention => embed.saturating_add(attn),
        Architecture::Hybrid => embed
            .saturating_add(conv)
            .saturating_add(f.saturating_mul(d))
            .saturating_add(attn),
    };
    if needed > budget {
        return Err(bad("dimensions exceed file size"));
    }
    let model = match arch {
        Architecture::Cnn => AnyModel::Cnn(load_params(CnnModel::zeros(v, d, f, w), &mut r)?),
        Architecture::Attention => {
            AnyModel::Attention(load_params(AttentionEncoder::zeros(v, d), &mut r)?)
        }
        Architecture::Hybrid => {
            AnyModel::Hybrid(load_params(HybridModel::zeros(v, d, f, w), &mut r)?)
        }
    };
    let count = r.u32()? as usize;
    if count + 1 != v {
        return Err(bad(format!(
            "vocabulary has {count} words, model expects {}",
            v.saturating_sub(1)
        )));
    }
    let mut words = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let w =
            std::str::from_utf8(r.take(len)?).map_err(|_| bad("vocabulary word is not UTF-8"))?;
        words.push(w.to_string());
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let vocab = Vocab::from_words(words);
    if vocab.size() != v {
        return Err(bad("duplicate vocabulary words"));
    }
    Ok(TrainedClassifier { vocab, model })
}

pub fn render_corpus(examples: &[(String, Label)]) -> String {
    let mut out = String::new();
    for (text, label) in examples {
        let _ = writeln!(out, "{}\t{}", label.as_str(), text);
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<(String, Label)>, ClassifierError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| ClassifierError::BadCorpusLine {
            line: n + 1,
            reason,
        };
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| err("expected label<TAB>text".into()))?;
        let label: Label = label.trim().parse().map_err(err)?;
        out.push((body.to_string(), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train, TrainConfig};

    #[test]
    fn model_file_round_trip_per_architecture() {
        let corpus = vec![
            ("my pin is 1234".to_string(), Label::Sensitive),
            ("turn on the lights".to_string(), Label::Benign),
        ];
        for arch in Architecture::ALL {
            let cfg = TrainConfig {
                architecture: arch,
                epochs: 3,
                d: 3,
                filters: 2,
                width: 2,
                ..TrainConfig::default()
            };
            let (clf, _) = train(&cfg, &corpus).unwrap();
            let bytes = write_model(&clf);
            assert_eq!(&bytes[..4], b"TGM1");
            assert_eq!(
                u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
                arch.tag()
            );
            let back = read_model(&bytes).unwrap();
            assert_eq!(back, clf);
            assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(read_model(&extra).is_err());
        }
    }

    #[test]
    fn header_carries_declared_dims() {
        let clf = TrainedClassifier {
            vocab: Vocab::from_words(["a", "b"]),
            model: AnyModel::Cnn(CnnModel::zeros(3, 2, 4, 3)),
        };
        let b = write_model(&clf);
        let words: Vec<u32> = b[4..24]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 3, 2, 4, 3]);
        // 3*2 + 4*3*2 + 4 + 1 floats
        assert_eq!(b.len(), 24 + 8 * 35 + 4 + (4 + 1) * 2);
    }

    #[test]
    fn corpus_format() {
        let ex = vec![
            ("my pin is 1".to_string(), Label::Sensitive),
            ("play music".to_string(), Label::Benign),
        ];
        let text = render_corpus(&ex);
        assert_eq!(text, "sensitive\tmy pin is 1\nbenign\tplay music\n");
        assert_eq!(parse_corpus(&text).unwrap(), ex);
        assert!(matches!(
            parse_corpus("maybe\tfoo"),
            Err(ClassifierError::BadCorpusLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("\nsensitive no tab"),
            Err(ClassifierError::BadCorpusLine { line: 2, .. })
        ));
    }
}

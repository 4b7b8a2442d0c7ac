//! Trusted-application classification stage.
//!
//! A transcription stub turns an [`EncodedBlock`] into text, the text is
//! tokenized against a [`Vocab`], and one of three binary models scores it:
//! [`CnnModel`], [`AttentionEncoder`] or [`HybridModel`]. All three are
//! trained from scratch by full-batch gradient descent on mean binary
//! cross-entropy with hand-derived gradients.

pub mod attention;
pub mod cnn;
pub mod hybrid;
pub mod io;
pub mod linalg;
mod train;

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::audio::{split_words, Label};
use crate::driver::EncodedBlock;

pub use attention::AttentionEncoder;
pub use cnn::CnnModel;
pub use hybrid::HybridModel;
pub use linalg::sigmoid;
pub use train::{loss_and_gradient, mean_loss, train, train_model, TrainConfig, Trained};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Embeddings start uniform in `±EMBED_INIT_SCALE`. Large initial embeddings
/// let the models memorize word pairs instead of learning keywords.
pub const EMBED_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("block carries no transcription payload")]
    MissingPayload,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus contains only {0:?} examples")]
    DegenerateCorpus(Label),
    #[error("non-finite parameter after epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid model file: {0}")]
    BadModelFile(String),
    #[error("corpus line {line}: {reason}")]
    BadCorpusLine { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Cnn,
    Attention,
    Hybrid,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Cnn,
        Architecture::Attention,
        Architecture::Hybrid,
    ];

    pub fn tag(self) -> u32 {
        match self {
            Architecture::Cnn => 1,
            Architecture::Attention => 2,
            Architecture::Hybrid => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Cnn => "cnn",
            Architecture::Attention => "attention",
            Architecture::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "attention" | "transformer" => Ok(Architecture::Attention),
            "hybrid" => Ok(Architecture::Hybrid),
            other => Err(format!("unknown architecture {other:?}")),
        }
    }
}

/// Model shape. `filters` and `width` are zero for the attention encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub d: usize,
    pub filters: usize,
    pub width: usize,
}

/// A differentiable binary classifier over token sequences.
pub trait Model: Clone + Send + Sync {
    fn architecture(&self) -> Architecture;
    fn dims(&self) -> Dims;
    fn logit(&self, tokens: &[usize]) -> f64;

    fn score(&self, tokens: &[usize]) -> f64 {
        sigmoid(self.logit(tokens))
    }

    /// Adds `d_logit · ∂logit/∂θ` into `grad`.
    fn backward(&self, tokens: &[usize], d_logit: f64, grad: &mut Self);

    fn zeros_like(&self) -> Self;

    /// Parameter blocks in serialization order.
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Right-pads with the unknown token up to `min_len` and maps
/// out-of-vocabulary indices to unknown.
pub(crate) fn pad_tokens(tokens: &[usize], min_len: usize, vocab: usize) -> Cow<'_, [usize]> {
    if tokens.len() >= min_len && tokens.iter().all(|&t| t < vocab) {
        return Cow::Borrowed(tokens);
    }
    let mut v: Vec<usize> = tokens
        .iter()
        .map(|&t| if t < vocab { t } else { 0 })
        .collect();
    v.resize(v.len().max(min_len), 0);
    Cow::Owned(v)
}

/// Word → index map. Index 0 is the unknown token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNKNOWN: usize = 0;

    /// Assigns indices `1..` in the given order; duplicates are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::default();
        for w in words {
            let w: String = w.into().to_lowercase();
            if !v.index.contains_key(&w) {
                v.words.push(w.clone());
                v.index.insert(w, v.words.len());
            }
        }
        v
    }

    /// Every distinct word of the corpus, in lexicographic order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        Self::build_with_min_count(texts, 1)
    }

    /// Words occurring at least `min_count` times, in lexicographic order.
    /// Rarer words stay unknown, which gives the unknown slot training signal.
    pub fn build_with_min_count<'a, I: IntoIterator<Item = &'a str>>(
        texts: I,
        min_count: usize,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in texts.into_iter().flat_map(split_words) {
            *counts.entry(w).or_default() += 1;
        }
        Self::from_words(
            counts
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .map(|(w, _)| w),
        )
    }

    /// `V`, including the unknown slot.
    pub fn size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn get(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.words.get(i))
            .map(String::as_str)
    }

    /// Known words in index order (index 1 first).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn detokenize(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<usize> {
    split_words(text).iter().map(|w| vocab.get(w)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub text: String,
    pub tokens: Vec<usize>,
}

impl Transcript {
    pub fn new(text: impl Into<String>, vocab: &Vocab) -> Self {
        let text = text.into();
        let tokens = tokenize(&text, vocab);
        Self { text, tokens }
    }
}

/// Speech-recognition stand-in: the block's attached payload, verbatim.
pub fn transcribe(block: &EncodedBlock, vocab: &Vocab) -> Result<Transcript, ClassifierError> {
    match block.attached_text.as_deref() {
        Some(t) if !t.is_empty() => Ok(Transcript::new(t, vocab)),
        _ => Err(ClassifierError::MissingPayload),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub score: f64,
    pub label: Label,
    pub threshold: f64,
}

impl Verdict {
    /// Ties go to `Sensitive`.
    pub fn new(score: f64, threshold: f64) -> Self {
        let label = if score >= threshold {
            Label::Sensitive
        } else {
            Label::Benign
        };
        Self {
            score,
            label,
            threshold,
        }
    }
}

/// Anything that can score a transcript in `[0, 1]`.
pub trait Scorer: Send + Sync {
    fn score(&self, transcript: &Transcript) -> f64;
}

pub fn classify<S: Scorer + ?Sized>(model: &S, transcript: &Transcript, threshold: f64) -> Verdict {
    Verdict::new(model.score(transcript), threshold)
}

/// One of the three trained architectures.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Cnn(CnnModel),
    Attention(AttentionEncoder),
    Hybrid(HybridModel),
}

impl AnyModel {
    pub fn architecture(&self) -> Architecture {
        match self {
            AnyModel::Cnn(_) => Architecture::Cnn,
            AnyModel::Attention(_) => Architecture::Attention,
            AnyModel::Hybrid(_) => Architecture::Hybrid,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            AnyModel::Cnn(m) => m.dims(),
            AnyModel::Attention(m) => m.dims(),
            AnyModel::Hybrid(m) => m.dims(),
        }
    }

    pub fn score_tokens(&self, tokens: &[usize]) -> f64 {
        match self {
            AnyModel::Cnn(m) => m.score(tokens),
            AnyModel::Attention(m) => m.score(tokens),
            AnyModel::Hybrid(m) => m.score(tokens),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            AnyModel::Cnn(m) => m.params(),
            AnyModel::Attention(m) => m.params(),
            AnyModel::Hybrid(m) => m.params(),
        }
    }
}

/// A trained model together with the vocabulary it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier {
    pub vocab: Vocab,
    pub model: AnyModel,
}

impl TrainedClassifier {
    pub fn accuracy(&self, examples: &[(String, Label)], threshold: f64) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let correct = examples
            .iter()
            .filter(|(text, label)| {
                classify(
                    self,
                    &Transcript::new(text.as_str(), &self.vocab),
                    threshold,
                )
                .label
                    == *label
            })
            .count();
        correct as f64 / examples.len() as f64
    }
}

impl Scorer for TrainedClassifier {
    fn score(&self, transcript: &Transcript) -> f64 {
        // Re-tokenize so transcripts built against another vocabulary still score correctly.
        self.model
            .score_tokens(&tokenize(&transcript.text, &self.vocab))
    }
}

/// Scores 1 when the transcript contains a keyword and 0 otherwise. This is
/// the ground-truth rule, used as an oracle classifier.
#[derive(Clone, Debug)]
pub struct KeywordOracle {
    pub keywords: Vec<String>,
}

impl Scorer for KeywordOracle {
    fn score(&self, transcript: &Transcript) -> f64 {
        match crate::audio::keyword_label(&transcript.text, &self.keywords) {
            Label::Sensitive => 1.0,
            Label::Benign => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::I2sFrame;

    #[test]
    fn tokenize_examples() {
        let vocab = Vocab::from_words(["my", "pin", "is"]);
        assert_eq!(tokenize("My PIN is 1234", &vocab), vec![1, 2, 3, 0]);
        assert_eq!(tokenize("", &vocab), Vec::<usize>::new());
        assert_eq!(tokenize("  --my...pin--", &vocab), vec![1, 2]);
        assert_eq!(vocab.size(), 4);
    }

    #[test]
    fn detokenize_retokenize_round_trip() {
        let mut gen = crate::audio::CorpusGenerator::new(Default::default(), 3);
        let corpus = gen.corpus(200);
        let vocab = Vocab::build(corpus.iter().map(|(t, _)| t.as_str()));
        for (text, _) in &corpus {
            let toks = tokenize(text, &vocab);
            assert!(toks.iter().all(|&t| t != 0));
            assert_eq!(tokenize(&vocab.detokenize(&toks), &vocab), toks);
        }
    }

    #[test]
    fn vocab_build_is_sorted_and_stable() {
        let a = Vocab::build(["b a", "c a"]);
        assert_eq!(a.words(), ["a", "b", "c"]);
        assert_eq!(a, Vocab::build(["b a", "c a"]));
        assert_eq!(a.word(0), None);
        assert_eq!(a.word(1), Some("a"));
        let common = Vocab::build_with_min_count(["b a", "c a"], 2);
        assert_eq!(common.words(), ["a"]);
    }

    #[test]
    fn transcribe_stub() {
        let vocab = Vocab::default();
        let block = EncodedBlock::new(0, &[I2sFrame::default()], Some("turn on the lights".into()));
        let t = transcribe(&block, &vocab).unwrap();
        assert_eq!(t.text, "turn on the lights");
        assert_eq!(transcribe(&block, &vocab).unwrap(), t);
        let empty = EncodedBlock::new(0, &[I2sFrame::default()], None);
        assert_eq!(
            transcribe(&empty, &vocab),
            Err(ClassifierError::MissingPayload)
        );
        let blank = EncodedBlock::new(0, &[I2sFrame::default()], Some(String::new()));
        assert_eq!(
            transcribe(&blank, &vocab),
            Err(ClassifierError::MissingPayload)
        );
    }

    #[test]
    fn verdict_ties_fail_closed() {
        assert_eq!(Verdict::new(0.5, 0.5).label, Label::Sensitive);
        assert_eq!(Verdict::new(0.49, 0.5).label, Label::Benign);
        assert_eq!(Verdict::new(1.0, 0.99).label, Label::Sensitive);
    }

    #[test]
    fn keyword_oracle() {
        let oracle = KeywordOracle {
            keywords: vec!["pin".into()],
        };
        let v = Vocab::default();
        assert_eq!(
            classify(&oracle, &Transcript::new("my pin is 1", &v), 0.5).label,
            Label::Sensitive
        );
        assert_eq!(
            classify(&oracle, &Transcript::new("spin me", &v), 0.5).label,
            Label::Benign
        );
    }
}

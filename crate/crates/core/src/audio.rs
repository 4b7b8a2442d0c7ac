//! I²S peripheral model.
//!
//! Frames are 16-bit stereo PCM. On the wire each frame occupies 32 serial
//! clocks: word-select low for the left word, high for the right word, data
//! MSB first with the standard one-clock delay after every word-select edge.
//! A frame segment is self-contained: the right word's LSB, which spills past
//! the end of its window, wraps into the first clock of the same segment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WORD_LENGTH: usize = 16;
pub const CLOCKS_PER_FRAME: usize = 2 * WORD_LENGTH;
/// Nominal only; nothing is clocked in real time.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PcmSample(pub i16);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct I2sFrame {
    pub left: PcmSample,
    pub right: PcmSample,
}

impl I2sFrame {
    pub fn new(left: i16, right: i16) -> Self {
        Self {
            left: PcmSample(left),
            right: PcmSample(right),
        }
    }

    /// Left sample in the low half, right in the high half.
    pub fn to_bits(self) -> u32 {
        (self.left.0 as u16 as u32) | ((self.right.0 as u16 as u32) << 16)
    }

    pub fn from_bits(bits: u32) -> Self {
        Self::new(bits as u16 as i16, (bits >> 16) as u16 as i16)
    }

    /// Interleaved little-endian PCM bytes, left first.
    pub fn to_le_bytes(self) -> [u8; 4] {
        let l = self.left.0.to_le_bytes();
        let r = self.right.0.to_le_bytes();
        [l[0], l[1], r[0], r[1]]
    }
}

/// One serial clock: word-select and serial-data line levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Clock {
    pub ws: bool,
    pub sd: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct I2sBitstream {
    pub clocks: Vec<Clock>,
}

impl I2sBitstream {
    pub fn len(&self) -> usize {
        self.clocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clocks.is_empty()
    }

    pub fn extend(&mut self, other: &I2sBitstream) {
        self.clocks.extend_from_slice(&other.clocks);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AudioError {
    #[error("unsupported word length {0} (only 16 is supported)")]
    UnsupportedWidth(usize),
    #[error("malformed I2S stream: {0}")]
    MalformedStream(String),
}

fn check_width(word_length: usize) -> Result<(), AudioError> {
    if word_length == WORD_LENGTH {
        Ok(())
    } else {
        Err(AudioError::UnsupportedWidth(word_length))
    }
}

fn bit(word: i16, i: usize) -> bool {
    (word as u16 >> i) & 1 == 1
}

pub fn encode_frame(frame: I2sFrame, word_length: usize) -> Result<I2sBitstream, AudioError> {
    check_width(word_length)?;
    let mut clocks = Vec::with_capacity(CLOCKS_PER_FRAME);
    // Clock 0 carries the right word's LSB (wrapped); the left word starts
    // one clock late and its LSB lands in the first clock of the right window.
    let (l, r) = (frame.left.0, frame.right.0);
    for c in 0..CLOCKS_PER_FRAME {
        let ws = c >= WORD_LENGTH;
        let sd = match c {
            0 => bit(r, 0),
            1..=15 => bit(l, WORD_LENGTH - c),
            16 => bit(l, 0),
            _ => bit(r, CLOCKS_PER_FRAME - c),
        };
        clocks.push(Clock { ws, sd });
    }
    Ok(I2sBitstream { clocks })
}

pub fn encode_frames(frames: &[I2sFrame], word_length: usize) -> Result<I2sBitstream, AudioError> {
    check_width(word_length)?;
    let mut out = I2sBitstream {
        clocks: Vec::with_capacity(frames.len() * CLOCKS_PER_FRAME),
    };
    for &f in frames {
        out.extend(&encode_frame(f, word_length)?);
    }
    Ok(out)
}

pub fn decode_bitstream(
    bits: &I2sBitstream,
    word_length: usize,
) -> Result<Vec<I2sFrame>, AudioError> {
    check_width(word_length)?;
    if !bits.len().is_multiple_of(CLOCKS_PER_FRAME) {
        return Err(AudioError::MalformedStream(format!(
            "length {} is not a multiple of {CLOCKS_PER_FRAME} clocks",
            bits.len()
        )));
    }
    let mut frames = Vec::with_capacity(bits.len() / CLOCKS_PER_FRAME);
    for (n, seg) in bits.clocks.chunks_exact(CLOCKS_PER_FRAME).enumerate() {
        if let Some(c) = seg
            .iter()
            .enumerate()
            .find(|(c, clk)| clk.ws != (*c >= WORD_LENGTH))
            .map(|(c, _)| c)
        {
            return Err(AudioError::MalformedStream(format!(
                "frame {n}: word-select run broken at clock {c}"
            )));
        }
        let mut l: u16 = 0;
        let mut r: u16 = 0;
        for (c, clk) in seg.iter().enumerate() {
            let v = clk.sd as u16;
            match c {
                0 => r |= v,
                1..=15 => l |= v << (WORD_LENGTH - c),
                16 => l |= v,
                _ => r |= v << (CLOCKS_PER_FRAME - c),
            }
        }
        frames.push(I2sFrame::new(l as i16, r as i16));
    }
    Ok(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Sensitive,
    Benign,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sensitive => "sensitive",
            Label::Benign => "benign",
        }
    }

    pub fn target(self) -> f64 {
        match self {
            Label::Sensitive => 1.0,
            Label::Benign => 0.0,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sensitive" | "1" => Ok(Label::Sensitive),
            "benign" | "0" => Ok(Label::Benign),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// A captured utterance. `payload_text` and `truth_label` are the test
/// harness's view of what was said; only the secure world may see the text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub frames: Vec<I2sFrame>,
    pub payload_text: String,
    pub truth_label: Label,
}

/// Lowercase alphanumeric words, split on any other character run.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ground-truth rule: sensitive iff any word is a configured keyword.
pub fn keyword_label(text: &str, keywords: &[String]) -> Label {
    let hit = split_words(text)
        .iter()
        .any(|w| keywords.iter().any(|k| k.eq_ignore_ascii_case(w)));
    if hit {
        Label::Sensitive
    } else {
        Label::Benign
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub keywords: Vec<String>,
    pub sensitivity_probability: f64,
    pub vocabulary_size: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            keywords: [
                "password",
                "pin",
                "ssn",
                "passport",
                "iban",
                "salary",
                "diagnosis",
                "secret",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            sensitivity_probability: 0.3,
            vocabulary_size: 120,
            min_words: 3,
            max_words: 10,
        }
    }
}

const COMMON_WORDS: &[&str] = &[
    "turn",
    "on",
    "off",
    "the",
    "lights",
    "kitchen",
    "play",
    "some",
    "music",
    "what",
    "is",
    "weather",
    "today",
    "set",
    "a",
    "timer",
    "for",
    "minutes",
    "my",
    "call",
    "mom",
    "remind",
    "me",
    "to",
    "buy",
    "milk",
    "open",
    "garage",
    "door",
    "how",
    "far",
    "station",
    "volume",
    "up",
    "down",
    "next",
    "song",
    "add",
    "eggs",
    "list",
    "tomorrow",
    "morning",
    "alarm",
    "living",
    "room",
    "thermostat",
    "degrees",
    "news",
    "read",
    "book",
    "stop",
    "pause",
    "and",
    "number",
    "account",
    "code",
    "card",
    "name",
    "email",
    "address",
    "tell",
    "about",
    "bank",
    "doctor",
    "appointment",
    "at",
    "with",
    "please",
    "share",
    "send",
    "message",
    "it",
    "of",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// Simulated microphone and corpus generator.
///
/// Sensitive utterances contain at least one keyword; benign ones are drawn
/// from a keyword-free vocabulary, so the coin flip and the keyword rule agree.
#[derive(Clone, Debug)]
pub struct CorpusGenerator {
    config: GeneratorConfig,
    vocabulary: Vec<String>,
    rng: ChaCha8Rng,
}

impl CorpusGenerator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let vocabulary = benign_vocabulary(&config);
        Self {
            config,
            vocabulary,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn next_text(&mut self) -> (String, Label) {
        let cfg = &self.config;
        let (lo, hi) = (
            cfg.min_words.max(1),
            cfg.max_words.max(cfg.min_words.max(1)),
        );
        let len = self.rng.gen_range(lo..=hi);
        let mut words: Vec<String> = (0..len)
            .map(|_| {
                self.vocabulary
                    .choose(&mut self.rng)
                    .cloned()
                    .unwrap_or_default()
            })
            .collect();
        if self.rng.gen_bool(0.2) {
            let at = self.rng.gen_range(0..=words.len());
            words.insert(at, format!("{:04}", self.rng.gen_range(0..10_000)));
        }
        let sensitive = !cfg.keywords.is_empty()
            && self
                .rng
                .gen_bool(cfg.sensitivity_probability.clamp(0.0, 1.0));
        if sensitive {
            let hits = if len > 4 && self.rng.gen_bool(0.25) {
                2
            } else {
                1
            };
            for _ in 0..hits {
                let k = cfg
                    .keywords
                    .choose(&mut self.rng)
                    .cloned()
                    .unwrap_or_default();
                let at = self.rng.gen_range(0..words.len());
                words[at] = k.to_lowercase();
            }
        }
        let text = words.join(" ");
        let label = keyword_label(&text, &cfg.keywords);
        (text, label)
    }

    /// `(text, label)` pairs for training and evaluation.
    pub fn corpus(&mut self, n: usize) -> Vec<(String, Label)> {
        (0..n).map(|_| self.next_text()).collect()
    }
}

fn benign_vocabulary(config: &GeneratorConfig) -> Vec<String> {
    let is_keyword = |w: &str| config.keywords.iter().any(|k| k.eq_ignore_ascii_case(w));
    let mut vocab: Vec<String> = COMMON_WORDS
        .iter()
        .filter(|w| !is_keyword(w))
        .map(|w| w.to_string())
        .take(config.vocabulary_size)
        .collect();
    'outer: for a in ONSETS {
        for b in NUCLEI {
            for c in ONSETS {
                for d in NUCLEI {
                    if vocab.len() >= config.vocabulary_size {
                        break 'outer;
                    }
                    let w = format!("{a}{b}{c}{d}");
                    if !is_keyword(&w) && !vocab.contains(&w) {
                        vocab.push(w);
                    }
                }
            }
        }
    }
    vocab
}

/// Microphone that produces seeded PCM noise and a generated payload.
#[derive(Clone, Debug)]
pub struct MicSource {
    generator: CorpusGenerator,
    pcm: ChaCha8Rng,
}

impl MicSource {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        Self {
            generator: CorpusGenerator::new(config, seed),
            pcm: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
        }
    }

    pub fn generator(&self) -> &CorpusGenerator {
        &self.generator
    }

    /// Captures `n` frames (at least one) of low-level noise plus a payload.
    pub fn capture(&mut self, n: usize) -> Utterance {
        let n = n.max(1);
        let frames = (0..n)
            .map(|_| {
                I2sFrame::new(
                    self.pcm.gen_range(-2048..2048),
                    self.pcm.gen_range(-2048..2048),
                )
            })
            .collect();
        let (payload_text, truth_label) = self.generator.next_text();
        Utterance {
            frames,
            payload_text,
            truth_label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_encodes_to_zero_data() {
        let bits = encode_frame(I2sFrame::new(0, 0), 16).unwrap();
        assert_eq!(bits.len(), 32);
        assert!(bits.clocks.iter().all(|c| !c.sd));
        assert!(bits.clocks[..16].iter().all(|c| !c.ws));
        assert!(bits.clocks[16..].iter().all(|c| c.ws));
    }

    #[test]
    fn left_lsb_lands_after_ws_edge() {
        // Hand-built timeline: left bits 15..1 at clocks 1..15, left bit 0 is
        // delayed past the ws edge into clock 16.
        let bits = encode_frame(I2sFrame::new(0x0001, 0), 16).unwrap();
        let ones: Vec<usize> = (0..32).filter(|&c| bits.clocks[c].sd).collect();
        assert_eq!(ones, vec![16]);
        assert!(bits.clocks[16].ws);

        let msb = encode_frame(I2sFrame::new(i16::MIN, 0), 16).unwrap();
        let ones: Vec<usize> = (0..32).filter(|&c| msb.clocks[c].sd).collect();
        assert_eq!(ones, vec![1]);

        let right_lsb = encode_frame(I2sFrame::new(0, 1), 16).unwrap();
        let ones: Vec<usize> = (0..32).filter(|&c| right_lsb.clocks[c].sd).collect();
        assert_eq!(ones, vec![0]);
    }

    #[test]
    fn width_and_empty_cases() {
        assert_eq!(
            encode_frame(I2sFrame::default(), 24),
            Err(AudioError::UnsupportedWidth(24))
        );
        assert_eq!(
            decode_bitstream(&I2sBitstream::default(), 16).unwrap(),
            vec![]
        );
    }

    #[test]
    fn short_ws_run_is_malformed() {
        let mut bits = encode_frames(&[I2sFrame::new(5, -5), I2sFrame::new(7, 9)], 16).unwrap();
        bits.clocks[15].ws = true; // left run is now 15 clocks
        assert!(matches!(
            decode_bitstream(&bits, 16),
            Err(AudioError::MalformedStream(_))
        ));
        let mut bits = encode_frame(I2sFrame::new(1, 2), 16).unwrap();
        bits.clocks.pop();
        assert!(matches!(
            decode_bitstream(&bits, 16),
            Err(AudioError::MalformedStream(_))
        ));
    }

    #[test]
    fn corners_round_trip() {
        for l in [i16::MIN, -1, 0, 1, i16::MAX] {
            for r in [i16::MIN, -1, 0, 1, i16::MAX] {
                let f = I2sFrame::new(l, r);
                let bits = encode_frame(f, 16).unwrap();
                assert_eq!(decode_bitstream(&bits, 16).unwrap(), vec![f]);
            }
        }
    }

    #[test]
    fn capture_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = MicSource::new(cfg.clone(), 42).capture(160);
        let b = MicSource::new(cfg, 42).capture(160);
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 160);
    }

    #[test]
    fn keyword_rule() {
        let kw = vec!["password".to_string()];
        assert_eq!(keyword_label("my password is x", &kw), Label::Sensitive);
        assert_eq!(keyword_label("my passwords are x", &kw), Label::Benign);
        assert_eq!(keyword_label("PASSWORD!", &kw), Label::Sensitive);
    }

    #[test]
    fn sensitive_fraction_tracks_probability() {
        let cfg = GeneratorConfig {
            sensitivity_probability: 0.3,
            ..GeneratorConfig::default()
        };
        let mut gen = CorpusGenerator::new(cfg.clone(), 7);
        let corpus = gen.corpus(1000);
        let sensitive = corpus
            .iter()
            .filter(|(_, l)| *l == Label::Sensitive)
            .count();
        let frac = sensitive as f64 / 1000.0;
        assert!((frac - 0.3).abs() <= 0.05, "fraction {frac}");
        for (text, label) in &corpus {
            assert_eq!(keyword_label(text, &cfg.keywords), *label);
        }
    }

    #[test]
    fn vocabulary_excludes_keywords() {
        let cfg = GeneratorConfig {
            keywords: vec!["account".into(), "bank".into(), "baba".into()],
            ..GeneratorConfig::default()
        };
        let gen = CorpusGenerator::new(cfg, 0);
        assert_eq!(gen.vocabulary().len(), 120);
        for w in ["account", "bank", "baba"] {
            assert!(!gen.vocabulary().iter().any(|v| v == w));
        }
    }
}

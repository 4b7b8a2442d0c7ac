//! End-to-end executor.
//!
//! A producer thread plays the microphone and the I²S bus; the secure-side
//! executor ingests each utterance into the driver, reads it back through
//! the PTA, classifies, filters and relays. The two are joined by a bounded
//! queue, so a slow consumer blocks capture.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::{
    encode_frames, CorpusGenerator, GeneratorConfig, I2sBitstream, Label, MicSource, WORD_LENGTH,
};
use crate::classifier::{
    classify, io::read_model, train, transcribe, Architecture, KeywordOracle, Scorer, TrainConfig,
    TrainedClassifier, Vocab,
};
use crate::driver::{EncodedBlock, SecureDriver};
use crate::pta::{Param, PtaBridge, PtaCommand, CMD_READ_AUDIO};
use crate::relay::{
    filter, handshake, relay_send, FilterPolicy, Outcome, RecordingConnector, RedactionLog,
    RelayPacket, TcpConnector,
};
use crate::tee::{AddressSpaceController, WorldContext, WorldId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Setup,
    Connect,
    Capture,
    Encode,
    Ingest,
    Pta,
    Transcribe,
    Classify,
    Relay,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Setup => "setup",
            Stage::Connect => "connect",
            Stage::Capture => "capture",
            Stage::Encode => "encode",
            Stage::Ingest => "ingest",
            Stage::Pta => "pta",
            Stage::Transcribe => "transcribe",
            Stage::Classify => "classify",
            Stage::Relay => "relay",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{stage} stage: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// `oracle` scores by the keyword rule; the three architectures either load
/// `model` or train inline on a generated corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Oracle,
    Learned(Architecture),
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Oracle => f.write_str("oracle"),
            ClassifierKind::Learned(a) => a.fmt(f),
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(ClassifierKind::Oracle);
        }
        s.parse::<Architecture>()
            .map(ClassifierKind::Learned)
            .map_err(|_| {
                format!("unknown classifier {s:?} (expected oracle, cnn, attention or hybrid)")
            })
    }
}

impl Serialize for ClassifierKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ClassifierKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    /// Serialized model; when absent a model is trained inline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub train_utterances: usize,
    pub lr: f64,
    pub epochs: usize,
    pub d: usize,
    pub filters: usize,
    pub width: usize,
    pub min_count: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: ClassifierKind::Oracle,
            model: None,
            train_utterances: 800,
            lr: t.lr,
            epochs: t.epochs,
            d: t.d,
            filters: t.filters,
            width: t.width,
            min_count: t.min_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub utterances: usize,
    pub frames_per_utterance: usize,
    /// Driver ring capacity in frames.
    pub driver_capacity: usize,
    /// Bound of the capture → executor queue.
    pub queue_depth: usize,
    /// `host:port` of the cloud endpoint. Empty means no network: packets are
    /// acknowledged locally by a recording channel.
    pub endpoint: String,
    pub cost_per_switch: u64,
    pub generator: GeneratorConfig,
    pub classifier: ClassifierSection,
    pub policy: FilterPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            utterances: 100,
            frames_per_utterance: 64,
            driver_capacity: 1024,
            queue_depth: 8,
            endpoint: String::new(),
            cost_per_switch: WorldContext::DEFAULT_COST_PER_SWITCH,
            generator: GeneratorConfig::default(),
            classifier: ClassifierSection::default(),
            policy: FilterPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(at(Stage::Config))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| {
            PipelineError::new(Stage::Config, format!("{}: {}", path.display(), e.message))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::new(Stage::Config, m));
        self.policy.validate().map_err(at(Stage::Config))?;
        if self.frames_per_utterance == 0 {
            return err("frames_per_utterance must be positive".into());
        }
        if self.frames_per_utterance > self.driver_capacity {
            return err(format!(
                "frames_per_utterance {} exceeds driver_capacity {}",
                self.frames_per_utterance, self.driver_capacity
            ));
        }
        if self.queue_depth == 0 {
            return err("queue_depth must be positive".into());
        }
        let g = &self.generator;
        if !(0.0..=1.0).contains(&g.sensitivity_probability) {
            return err(format!(
                "sensitivity_probability {} outside [0, 1]",
                g.sensitivity_probability
            ));
        }
        if g.min_words == 0 || g.min_words > g.max_words {
            return err(format!(
                "bad utterance length range {}..={}",
                g.min_words, g.max_words
            ));
        }
        if g.keywords.is_empty() {
            return err("keyword list is empty".into());
        }
        if let Some(p) = &self.classifier.model {
            if !p.exists() {
                return err(format!("model file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    fn train_config(&self, arch: Architecture) -> TrainConfig {
        let c = &self.classifier;
        TrainConfig {
            architecture: arch,
            lr: c.lr,
            epochs: c.epochs,
            seed: self.seed,
            d: c.d,
            filters: c.filters,
            width: c.width,
            min_count: c.min_count,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub processed: u64,
    pub sensitive: u64,
    pub redacted: u64,
    pub forwarded: u64,
    pub switches: u64,
    pub cost_units: u64,
    pub bytes_sent: u64,
    /// Capture-to-decision wall time per utterance.
    pub latency_us: Vec<u64>,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics are always serializable")
    }

    /// Copy with latency cleared, for comparisons across runs.
    pub fn without_latency(&self) -> Self {
        Self {
            latency_us: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub metrics: RunMetrics,
    pub redaction_log: RedactionLog,
    /// Every byte handed to the transport, in order.
    pub wire_bytes: Vec<u8>,
    /// The packets those bytes encode.
    pub sent: Vec<RelayPacket>,
}

/// Builds the classifier the config asks for.
pub fn build_scorer(cfg: &PipelineConfig) -> Result<(Box<dyn Scorer>, Vocab), PipelineError> {
    let kind = cfg.classifier.kind;
    let arch = match kind {
        ClassifierKind::Oracle => {
            let oracle = KeywordOracle {
                keywords: cfg.generator.keywords.clone(),
            };
            return Ok((Box::new(oracle), Vocab::from_words(Vec::<String>::new())));
        }
        ClassifierKind::Learned(a) => a,
    };
    let clf: TrainedClassifier = match &cfg.classifier.model {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                PipelineError::new(Stage::Setup, format!("{}: {e}", path.display()))
            })?;
            let clf = read_model(&bytes).map_err(|e| {
                PipelineError::new(Stage::Setup, format!("{}: {e}", path.display()))
            })?;
            if clf.model.architecture() != arch {
                return Err(PipelineError::new(
                    Stage::Setup,
                    format!(
                        "{} holds a {} model, config asks for {arch}",
                        path.display(),
                        clf.model.architecture()
                    ),
                ));
            }
            clf
        }
        None => {
            // Training text is drawn from a stream independent of the run's.
            let mut gen = CorpusGenerator::new(cfg.generator.clone(), cfg.seed ^ 0x5EED_7EA1);
            let corpus = gen.corpus(cfg.classifier.train_utterances);
            train(&cfg.train_config(arch), &corpus)
                .map_err(at(Stage::Setup))?
                .0
        }
    };
    let vocab = clf.vocab.clone();
    Ok((Box::new(clf), vocab))
}

struct Captured {
    stream: I2sBitstream,
    frames: usize,
    text: String,
    captured_at: Instant,
}

// Layout of the simulated machine.
const DRIVER_BASE: u64 = 0x1000_0000;
const TA_BUFFER_BASE: u64 = 0x2000_0000;
const TA_BUFFER_LEN: u64 = 0x1_0000;

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunMetrics, PipelineError> {
    run_pipeline_report(cfg).map(|r| r.metrics)
}

pub fn run_pipeline_report(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let (scorer, vocab) = build_scorer(cfg)?;

    let mut asc = AddressSpaceController::new();
    let ring_bytes = (cfg.driver_capacity * crate::driver::BYTES_PER_FRAME) as u64;
    let drv_region = asc
        .carve_secure_region(DRIVER_BASE, ring_bytes.max(1))
        .map_err(at(Stage::Setup))?;
    let ta_region = asc
        .carve_secure_region(TA_BUFFER_BASE, TA_BUFFER_LEN)
        .map_err(at(Stage::Setup))?;
    let driver =
        SecureDriver::init(&asc, drv_region, cfg.driver_capacity).map_err(at(Stage::Setup))?;
    let bridge = PtaBridge::new(Arc::new(asc), Arc::new(driver));
    let session = bridge.open_session();

    let connector = if cfg.endpoint.is_empty() {
        RecordingConnector::new(None)
    } else {
        RecordingConnector::new(Some(TcpConnector::new(cfg.endpoint.clone())))
    };
    let wire = Arc::clone(&connector.log);
    let mut conn = handshake(connector).map_err(at(Stage::Connect))?;

    let mut ctx = WorldContext::with_cost(WorldId::Secure, cfg.cost_per_switch);
    let mut metrics = RunMetrics::default();
    let mut log = RedactionLog::default();
    let mut next_seq: u32 = 0;

    let (tx, rx) = sync_channel::<Result<Captured, PipelineError>>(cfg.queue_depth);
    let producer_cfg = (
        cfg.generator.clone(),
        cfg.seed,
        cfg.utterances,
        cfg.frames_per_utterance,
    );
    let producer = std::thread::spawn(move || {
        let (gen, seed, n, frames) = producer_cfg;
        let mut mic = MicSource::new(gen, seed);
        for _ in 0..n {
            let u = mic.capture(frames);
            let captured_at = Instant::now();
            let item = encode_frames(&u.frames, WORD_LENGTH)
                .map(|stream| Captured {
                    stream,
                    frames: u.frames.len(),
                    text: u.payload_text,
                    captured_at,
                })
                .map_err(at(Stage::Encode));
            let failed = item.is_err();
            if tx.send(item).is_err() || failed {
                return;
            }
        }
    });

    let result = (|| -> Result<(), PipelineError> {
        for item in rx.iter() {
            let c = item?;
            let driver = bridge.driver();
            driver
                .ingest_with_payload(&c.stream, Some(c.text))
                .map_err(at(Stage::Ingest))?;
            let cmd = PtaCommand::new(
                session,
                CMD_READ_AUDIO,
                [
                    Param::MemRef {
                        region: ta_region,
                        offset: 0,
                        length: TA_BUFFER_LEN as u32,
                    },
                    Param::Value {
                        a: c.frames as u32,
                        b: 0,
                    },
                    Param::None,
                    Param::None,
                ],
            );
            let resp = bridge.invoke(&cmd, &ctx);
            if !resp.is_ok() {
                return Err(PipelineError::new(
                    Stage::Pta,
                    format!("READ_AUDIO returned {:?}", resp.status()),
                ));
            }
            let bytes = bridge
                .read_memref(WorldId::Secure, resp.params[0])
                .map_err(at(Stage::Pta))?;
            let block = EncodedBlock::from_bytes(&bytes).map_err(at(Stage::Pta))?;
            let transcript = transcribe(&block, &vocab).map_err(at(Stage::Transcribe))?;
            let verdict = classify(scorer.as_ref(), &transcript, cfg.policy.threshold);
            if !verdict.score.is_finite() {
                return Err(PipelineError::new(Stage::Classify, "non-finite score"));
            }
            let outcome = filter(&verdict, &transcript, &cfg.policy);
            log.push(block.header.sequence, &verdict, &outcome);
            metrics.processed += 1;
            if verdict.label == Label::Sensitive {
                metrics.sensitive += 1;
            }
            match outcome {
                Outcome::Redacted => metrics.redacted += 1,
                Outcome::Forward { payload, masked } => {
                    let packet = RelayPacket::new(next_seq, &payload, masked);
                    // A sequence number is never reused, even after a failure.
                    next_seq = next_seq.wrapping_add(1);
                    relay_send(&packet, &mut conn, &mut ctx).map_err(at(Stage::Relay))?;
                    metrics.forwarded += 1;
                    metrics.bytes_sent += packet.encoded_len() as u64;
                }
            }
            metrics
                .latency_us
                .push(c.captured_at.elapsed().as_micros() as u64);
        }
        Ok(())
    })();
    // Unblock and reap the producer whatever happened.
    drop(rx);
    let _ = producer.join();
    result?;
    let _ = bridge.close_session(session);
    conn.close().map_err(at(Stage::Relay))?;

    metrics.switches = ctx.switch_count();
    metrics.cost_units = ctx.switch_cost_units();
    let wire_bytes = take(&wire);
    let sent = split_frames(&wire_bytes);
    Ok(RunReport {
        metrics,
        redaction_log: log,
        wire_bytes,
        sent,
    })
}

fn take(log: &Mutex<Vec<u8>>) -> Vec<u8> {
    std::mem::take(&mut *log.lock().unwrap())
}

/// Splits a concatenation of well-formed frames.
pub fn split_frames(mut bytes: &[u8]) -> Vec<RelayPacket> {
    let mut out = Vec::new();
    while let Ok(h) = crate::relay::FrameHeader::parse(bytes) {
        let end = crate::relay::FRAME_HEADER_LEN + h.length as usize;
        if bytes.len() < end {
            break;
        }
        out.push(RelayPacket::from_bytes(&bytes[..end]).expect("header already parsed"));
        bytes = &bytes[end..];
    }
    out
}

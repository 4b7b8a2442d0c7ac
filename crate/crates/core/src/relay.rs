//! Redaction and relay to the cloud endpoint.
//!
//! The trusted side decides what may leave ([`filter`]), frames survivors as
//! [`RelayPacket`]s and hands them to the normal-world supplicant, which owns
//! the transport. Every send crosses to the normal world and back.
//!
//! Wire format, little-endian:
//!
//! ```text
//! frame = "TGR1" ‖ sequence u32 ‖ flags u32 ‖ length u32 ‖ payload
//! ack   = "TGA1" ‖ sequence u32 ‖ status u32        // 0 = ACK, 1 = NAK
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{split_words, Label};
use crate::classifier::{Transcript, Verdict};
use crate::tee::{WorldContext, WorldId};

pub const FRAME_MAGIC: [u8; 4] = *b"TGR1";
pub const ACK_MAGIC: [u8; 4] = *b"TGA1";
pub const FRAME_HEADER_LEN: usize = 16;
pub const ACK_LEN: usize = 12;
/// Bit 0 of `flags`: the payload is masked text.
pub const FLAG_MASKED: u32 = 1;
pub const STATUS_ACK: u32 = 0;
pub const STATUS_NAK: u32 = 1;
/// Frames announcing more than this are rejected without reading the body.
pub const MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("not connected")]
    NotConnected,
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint rejected packet {sequence}")]
    Rejected { sequence: u32 },
    #[error("bind failed: {0}")]
    Bind(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    #[error("need {needed} bytes, have {have}")]
    Short { needed: usize, have: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("payload length {0} exceeds limit")]
    TooLarge(u32),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Drop,
    Mask,
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drop" => Ok(Action::Drop),
            "mask" => Ok(Action::Mask),
            other => Err(format!("unknown action {other:?} (expected drop or mask)")),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Drop => "drop",
            Action::Mask => "mask",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub threshold: f64,
    pub action: Action,
    pub mask_token: String,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            threshold: crate::classifier::DEFAULT_THRESHOLD,
            action: Action::Drop,
            mask_token: "▇".to_string(),
        }
    }
}

impl FilterPolicy {
    pub fn new(threshold: f64, action: Action) -> Result<Self, RelayError> {
        let p = Self {
            threshold,
            action,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RelayError> {
        if self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(RelayError::InvalidThreshold(self.threshold))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Forward { payload: String, masked: bool },
    Redacted,
}

/// Decides what of `transcript` may leave the secure world.
pub fn filter(verdict: &Verdict, transcript: &Transcript, policy: &FilterPolicy) -> Outcome {
    match (verdict.label, policy.action) {
        (Label::Benign, _) => Outcome::Forward {
            payload: transcript.text.clone(),
            masked: false,
        },
        (Label::Sensitive, Action::Drop) => Outcome::Redacted,
        (Label::Sensitive, Action::Mask) => Outcome::Forward {
            payload: vec![policy.mask_token.as_str(); split_words(&transcript.text).len()]
                .join(" "),
            masked: true,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelayPacket {
    pub sequence: u32,
    pub flags: u32,
    pub payload: Vec<u8>,
}

impl RelayPacket {
    pub fn new(sequence: u32, payload: &str, masked: bool) -> Self {
        Self {
            sequence,
            flags: if masked { FLAG_MASKED } else { 0 },
            payload: payload.as_bytes().to_vec(),
        }
    }

    pub fn is_masked(&self) -> bool {
        self.flags & FLAG_MASKED != 0
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FrameError> {
        let h = FrameHeader::parse(b)?;
        let total = FRAME_HEADER_LEN + h.length as usize;
        if b.len() < total {
            return Err(FrameError::Short {
                needed: total,
                have: b.len(),
            });
        }
        if b.len() > total {
            return Err(FrameError::Trailing(b.len() - total));
        }
        Ok(Self {
            sequence: h.sequence,
            flags: h.flags,
            payload: b[FRAME_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub sequence: u32,
    pub flags: u32,
    pub length: u32,
}

fn le32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

impl FrameHeader {
    pub fn parse(b: &[u8]) -> Result<Self, FrameError> {
        if b.len() < FRAME_HEADER_LEN {
            return Err(FrameError::Short {
                needed: FRAME_HEADER_LEN,
                have: b.len(),
            });
        }
        if b[..4] != FRAME_MAGIC {
            return Err(FrameError::BadMagic);
        }
        let length = le32(b, 12);
        if length as usize > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(length));
        }
        Ok(Self {
            sequence: le32(b, 4),
            flags: le32(b, 8),
            length,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ack {
    pub sequence: u32,
    pub status: u32,
}

impl Ack {
    pub fn to_bytes(&self) -> [u8; ACK_LEN] {
        let mut out = [0u8; ACK_LEN];
        out[..4].copy_from_slice(&ACK_MAGIC);
        out[4..8].copy_from_slice(&self.sequence.to_le_bytes());
        out[8..].copy_from_slice(&self.status.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FrameError> {
        if b.len() != ACK_LEN {
            return Err(if b.len() < ACK_LEN {
                FrameError::Short {
                    needed: ACK_LEN,
                    have: b.len(),
                }
            } else {
                FrameError::Trailing(b.len() - ACK_LEN)
            });
        }
        if b[..4] != ACK_MAGIC {
            return Err(FrameError::BadMagic);
        }
        Ok(Self {
            sequence: le32(b, 4),
            status: le32(b, 8),
        })
    }
}

/// A byte transport to the endpoint. Implementations write one frame and
/// return the endpoint's acknowledgement.
pub trait Channel: Send {
    fn exchange(&mut self, frame: &[u8]) -> Result<Ack, RelayError>;
    fn close(&mut self) {}
}

/// Produces connected channels. The production intent is an authenticated,
/// encrypted transport; [`TcpConnector`] is plain TCP.
pub trait Connector: Send {
    fn connect(&self) -> Result<Box<dyn Channel>, RelayError>;
}

#[derive(Clone, Debug)]
pub struct TcpConnector {
    pub endpoint: String,
    pub timeout: Duration,
}

impl TcpConnector {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(5),
        }
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> Result<Box<dyn Channel>, RelayError> {
        let err = |e: &dyn fmt::Display| RelayError::Connect(format!("{}: {e}", self.endpoint));
        let addrs: Vec<SocketAddr> = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| err(&e))?
            .collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, self.timeout) {
                Ok(s) => {
                    s.set_nodelay(true).ok();
                    s.set_read_timeout(Some(self.timeout)).ok();
                    return Ok(Box::new(TcpChannel { stream: Some(s) }));
                }
                Err(e) => last = Some(e),
            }
        }
        Err(match last {
            Some(e) => err(&e),
            None => err(&"no addresses"),
        })
    }
}

pub struct TcpChannel {
    stream: Option<TcpStream>,
}

impl Channel for TcpChannel {
    fn exchange(&mut self, frame: &[u8]) -> Result<Ack, RelayError> {
        let s = self.stream.as_mut().ok_or(RelayError::NotConnected)?;
        let io = |e: io::Error| RelayError::Transport(e.to_string());
        s.write_all(frame).map_err(io)?;
        let mut buf = [0u8; ACK_LEN];
        s.read_exact(&mut buf).map_err(io)?;
        Ack::from_bytes(&buf).map_err(|e| RelayError::Transport(format!("bad ack: {e}")))
    }

    fn close(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// Wraps another channel (or acknowledges locally) and keeps every byte
/// written, i.e. exactly what the cloud observes.
pub struct RecordingChannel {
    inner: Option<Box<dyn Channel>>,
    log: Arc<Mutex<Vec<u8>>>,
}

impl RecordingChannel {
    pub fn new(inner: Option<Box<dyn Channel>>) -> (Self, Arc<Mutex<Vec<u8>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: Arc::clone(&log),
            },
            log,
        )
    }
}

impl Channel for RecordingChannel {
    fn exchange(&mut self, frame: &[u8]) -> Result<Ack, RelayError> {
        self.log.lock().unwrap().extend_from_slice(frame);
        match self.inner.as_mut() {
            Some(c) => c.exchange(frame),
            None => {
                let status = match RelayPacket::from_bytes(frame) {
                    Ok(_) => STATUS_ACK,
                    Err(_) => STATUS_NAK,
                };
                Ok(Ack {
                    sequence: FrameHeader::parse(frame).map(|h| h.sequence).unwrap_or(0),
                    status,
                })
            }
        }
    }

    fn close(&mut self) {
        if let Some(c) = self.inner.as_mut() {
            c.close();
        }
    }
}

/// Connector that wraps whatever `inner` yields in a [`RecordingChannel`]
/// sharing one log.
pub struct RecordingConnector<C> {
    pub inner: Option<C>,
    pub log: Arc<Mutex<Vec<u8>>>,
}

impl<C: Connector> RecordingConnector<C> {
    pub fn new(inner: Option<C>) -> Self {
        Self {
            inner,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }
}

impl<C: Connector> Connector for RecordingConnector<C> {
    fn connect(&self) -> Result<Box<dyn Channel>, RelayError> {
        let inner = match &self.inner {
            Some(c) => Some(c.connect()?),
            None => None,
        };
        Ok(Box::new(RecordingChannel {
            inner,
            log: Arc::clone(&self.log),
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SupplicantRequest {
    Connect,
    Send { connection: u32, payload: Vec<u8> },
    Close { connection: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SupplicantReply {
    Connected(u32),
    Delivered(Ack),
    Closed,
}

/// Normal-world daemon that owns network channels on behalf of the TA.
pub struct Supplicant {
    connector: Box<dyn Connector>,
    channels: BTreeMap<u32, Box<dyn Channel>>,
    next_id: u32,
}

impl Supplicant {
    pub fn new(connector: Box<dyn Connector>) -> Self {
        Self {
            connector,
            channels: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn handle(&mut self, req: SupplicantRequest) -> Result<SupplicantReply, RelayError> {
        match req {
            SupplicantRequest::Connect => {
                let ch = self.connector.connect()?;
                let id = self.next_id;
                self.next_id += 1;
                self.channels.insert(id, ch);
                Ok(SupplicantReply::Connected(id))
            }
            SupplicantRequest::Send {
                connection,
                payload,
            } => {
                let ch = self
                    .channels
                    .get_mut(&connection)
                    .ok_or(RelayError::NotConnected)?;
                ch.exchange(&payload).map(SupplicantReply::Delivered)
            }
            SupplicantRequest::Close { connection } => {
                let mut ch = self
                    .channels
                    .remove(&connection)
                    .ok_or(RelayError::NotConnected)?;
                ch.close();
                Ok(SupplicantReply::Closed)
            }
        }
    }
}

/// The TA's handle on a supplicant connection.
pub struct Connection {
    supplicant: Supplicant,
    id: Option<u32>,
}

impl Connection {
    pub fn is_connected(&self) -> bool {
        self.id.is_some()
    }

    pub fn close(&mut self) -> Result<(), RelayError> {
        let id = self.id.take().ok_or(RelayError::NotConnected)?;
        self.supplicant
            .handle(SupplicantRequest::Close { connection: id })
            .map(|_| ())
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Asks a fresh supplicant to open a channel with `connector`. Setup RPCs
/// are not charged to a [`WorldContext`].
pub fn handshake(connector: impl Connector + 'static) -> Result<Connection, RelayError> {
    let mut supplicant = Supplicant::new(Box::new(connector));
    match supplicant.handle(SupplicantRequest::Connect)? {
        SupplicantReply::Connected(id) => Ok(Connection {
            supplicant,
            id: Some(id),
        }),
        other => Err(RelayError::Connect(format!("unexpected reply {other:?}"))),
    }
}

/// Sends one packet through the supplicant: secure → normal, write, normal
/// → secure. Fails before crossing when the connection is closed.
pub fn relay_send(
    packet: &RelayPacket,
    conn: &mut Connection,
    ctx: &mut WorldContext,
) -> Result<Ack, RelayError> {
    let id = conn.id.ok_or(RelayError::NotConnected)?;
    let origin = ctx.current();
    ctx.world_switch(WorldId::Normal);
    let reply = conn.supplicant.handle(SupplicantRequest::Send {
        connection: id,
        payload: packet.to_bytes(),
    });
    ctx.world_switch(origin);
    match reply? {
        SupplicantReply::Delivered(ack) if ack.sequence != packet.sequence => {
            Err(RelayError::Transport(format!(
                "ack for {} while sending {}",
                ack.sequence, packet.sequence
            )))
        }
        SupplicantReply::Delivered(ack) if ack.status != STATUS_ACK => Err(RelayError::Rejected {
            sequence: packet.sequence,
        }),
        SupplicantReply::Delivered(ack) => Ok(ack),
        other => Err(RelayError::Transport(format!("unexpected reply {other:?}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogAction {
    Forwarded,
    Masked,
    Dropped,
}

impl LogAction {
    pub fn as_str(self) -> &'static str {
        match self {
            LogAction::Forwarded => "forward",
            LogAction::Masked => "mask",
            LogAction::Dropped => "drop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RedactionRecord {
    pub sequence: u32,
    pub score: f64,
    pub label: Label,
    pub action: LogAction,
}

/// One record per classified utterance. Held by the secure side.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RedactionLog {
    pub records: Vec<RedactionRecord>,
}

impl RedactionLog {
    pub fn push(&mut self, sequence: u32, verdict: &Verdict, outcome: &Outcome) {
        let action = match outcome {
            Outcome::Redacted => LogAction::Dropped,
            Outcome::Forward { masked: true, .. } => LogAction::Masked,
            Outcome::Forward { masked: false, .. } => LogAction::Forwarded,
        };
        self.records.push(RedactionRecord {
            sequence,
            score: verdict.score,
            label: verdict.label,
            action,
        });
    }

    /// `seq score label action`, one record per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{} {:.6} {} {}",
                r.sequence,
                r.score,
                r.label.as_str(),
                r.action.as_str()
            );
        }
        out
    }
}

#[derive(Default)]
struct CloudState {
    received: Mutex<Vec<RelayPacket>>,
    naks: Mutex<u64>,
    streams: Mutex<Vec<TcpStream>>,
    stopping: AtomicBool,
}

/// In-process stand-in for the cloud API. Accepts any number of
/// connections, one thread each, and acknowledges every frame.
pub struct MockCloud {
    addr: SocketAddr,
    state: Arc<CloudState>,
    acceptor: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl MockCloud {
    pub fn serve(bind: &str) -> Result<Self, RelayError> {
        let listener =
            TcpListener::bind(bind).map_err(|e| RelayError::Bind(format!("{bind}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| RelayError::Bind(e.to_string()))?;
        let state = Arc::new(CloudState::default());
        let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
        let acceptor = {
            let state = Arc::clone(&state);
            let workers = Arc::clone(&workers);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if state.stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    if let Ok(clone) = stream.try_clone() {
                        state.streams.lock().unwrap().push(clone);
                    }
                    let st = Arc::clone(&state);
                    workers
                        .lock()
                        .unwrap()
                        .push(std::thread::spawn(move || serve_connection(stream, &st)));
                }
            })
        };
        Ok(Self {
            addr,
            state,
            acceptor: Some(acceptor),
            workers,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Packets acknowledged so far, in arrival order.
    pub fn received(&self) -> Vec<RelayPacket> {
        self.state.received.lock().unwrap().clone()
    }

    pub fn payloads(&self) -> Vec<Vec<u8>> {
        self.received().into_iter().map(|p| p.payload).collect()
    }

    pub fn nak_count(&self) -> u64 {
        *self.state.naks.lock().unwrap()
    }

    /// Stops accepting, closes open connections and returns what was received.
    pub fn shutdown(mut self) -> Vec<RelayPacket> {
        self.stop();
        self.received()
    }

    fn stop(&mut self) {
        let Some(acceptor) = self.acceptor.take() else {
            return;
        };
        self.state.stopping.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        let _ = acceptor.join();
        for s in self.state.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for w in self.workers.lock().unwrap().drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockCloud {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection(mut stream: TcpStream, state: &CloudState) {
    let mut header = [0u8; FRAME_HEADER_LEN];
    loop {
        if stream.read_exact(&mut header).is_err() {
            return;
        }
        let sequence = le32(&header, 4);
        let nak = |stream: &mut TcpStream| {
            *state.naks.lock().unwrap() += 1;
            stream
                .write_all(
                    &Ack {
                        sequence,
                        status: STATUS_NAK,
                    }
                    .to_bytes(),
                )
                .is_ok()
        };
        let h = match FrameHeader::parse(&header) {
            Ok(h) => h,
            // The body length cannot be trusted, so resynchronizing is
            // impossible after an oversize frame.
            Err(FrameError::TooLarge(_)) => {
                nak(&mut stream);
                return;
            }
            Err(_) => {
                // Bad magic: skip the announced body if it is plausible.
                let length = le32(&header, 12) as usize;
                if length > MAX_PAYLOAD
                    || io::copy(&mut (&stream).take(length as u64), &mut io::sink()).ok()
                        != Some(length as u64)
                {
                    nak(&mut stream);
                    return;
                }
                if nak(&mut stream) {
                    continue;
                }
                return;
            }
        };
        let mut payload = vec![0u8; h.length as usize];
        if stream.read_exact(&mut payload).is_err() {
            return;
        }
        if std::str::from_utf8(&payload).is_err() {
            if nak(&mut stream) {
                continue;
            }
            return;
        }
        state.received.lock().unwrap().push(RelayPacket {
            sequence: h.sequence,
            flags: h.flags,
            payload,
        });
        if stream
            .write_all(
                &Ack {
                    sequence: h.sequence,
                    status: STATUS_ACK,
                }
                .to_bytes(),
            )
            .is_err()
        {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Vocab;

    fn transcript(text: &str) -> Transcript {
        Transcript::new(text, &Vocab::from_words(Vec::<String>::new()))
    }

    #[test]
    fn filter_examples() {
        let drop = FilterPolicy::default();
        let benign = Verdict::new(0.1, 0.5);
        let sensitive = Verdict::new(0.9, 0.5);
        assert_eq!(
            filter(&benign, &transcript("turn on lights"), &drop),
            Outcome::Forward {
                payload: "turn on lights".into(),
                masked: false
            }
        );
        assert_eq!(
            filter(&sensitive, &transcript("my pin is 1234"), &drop),
            Outcome::Redacted
        );
        let mask = FilterPolicy {
            action: Action::Mask,
            ..FilterPolicy::default()
        };
        let t = transcript("my pin is 1234");
        match filter(&sensitive, &t, &mask) {
            Outcome::Forward { payload, masked } => {
                assert!(masked);
                assert_eq!(payload, "▇ ▇ ▇ ▇");
                assert_eq!(payload.split(' ').count(), t.tokens.len());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn policy_threshold_range() {
        assert!(FilterPolicy::new(0.5, Action::Drop).is_ok());
        for t in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(FilterPolicy::new(t, Action::Drop).is_err(), "{t}");
        }
    }

    #[test]
    fn frame_layout() {
        let p = RelayPacket::new(7, "hi", true);
        assert_eq!(
            p.to_bytes(),
            [
                b"TGR1".as_slice(),
                &[7, 0, 0, 0],
                &[1, 0, 0, 0],
                &[2, 0, 0, 0],
                b"hi"
            ]
            .concat()
        );
        assert_eq!(RelayPacket::from_bytes(&p.to_bytes()).unwrap(), p);
        let a = Ack {
            sequence: 9,
            status: STATUS_NAK,
        };
        assert_eq!(a.to_bytes(), *b"TGA1\x09\0\0\0\x01\0\0\0");
        assert_eq!(Ack::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn frame_errors() {
        let b = RelayPacket::new(1, "abc", false).to_bytes();
        assert!(matches!(
            RelayPacket::from_bytes(&b[..10]),
            Err(FrameError::Short { .. })
        ));
        assert!(matches!(
            RelayPacket::from_bytes(&b[..18]),
            Err(FrameError::Short { .. })
        ));
        let mut extra = b.clone();
        extra.push(0);
        assert_eq!(
            RelayPacket::from_bytes(&extra),
            Err(FrameError::Trailing(1))
        );
        let mut bad = b.clone();
        bad[0] = b'X';
        assert_eq!(RelayPacket::from_bytes(&bad), Err(FrameError::BadMagic));
        let mut huge = b;
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(
            RelayPacket::from_bytes(&huge),
            Err(FrameError::TooLarge(u32::MAX))
        );
    }

    #[test]
    fn send_costs_two_switches() {
        let mut conn = handshake(RecordingConnector::<TcpConnector>::new(None)).unwrap();
        let mut ctx = WorldContext::new(WorldId::Secure);
        for i in 0..5 {
            relay_send(&RelayPacket::new(i, "x", false), &mut conn, &mut ctx).unwrap();
            assert_eq!(ctx.switch_count(), 2 * (i as u64 + 1));
        }
        assert_eq!(ctx.current(), WorldId::Secure);
        conn.close().unwrap();
        assert_eq!(
            relay_send(&RelayPacket::new(5, "x", false), &mut conn, &mut ctx),
            Err(RelayError::NotConnected)
        );
        assert_eq!(ctx.switch_count(), 10);
    }

    #[test]
    fn redaction_log_lines() {
        let mut log = RedactionLog::default();
        log.push(
            0,
            &Verdict::new(0.25, 0.5),
            &Outcome::Forward {
                payload: "a".into(),
                masked: false,
            },
        );
        log.push(1, &Verdict::new(1.0, 0.5), &Outcome::Redacted);
        assert_eq!(
            log.render(),
            "0 0.250000 benign forward\n1 1.000000 sensitive drop\n"
        );
    }
}

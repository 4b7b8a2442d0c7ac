//! Secure-world I²S driver.
//!
//! Frames are buffered in a bounded ring whose backing range sits entirely
//! inside a `SecureOnly` region. The ring is single-producer/single-consumer:
//! [`SecureDriver::ingest`] may run on one thread while
//! [`SecureDriver::read_block`] runs on another. When the ring is full, new
//! frames are rejected and counted as overruns.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::audio::{decode_bitstream, AudioError, I2sBitstream, I2sFrame, WORD_LENGTH};
use crate::tee::{AddressSpaceController, Owner, RegionId, WorldId};

pub const BLOCK_MAGIC: [u8; 4] = *b"TGB1";
pub const BLOCK_HEADER_LEN: usize = 16;
pub const BYTES_PER_FRAME: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DriverError {
    #[error("cannot allocate {needed} bytes of ring storage in region {region}: {reason}")]
    Allocation {
        region: RegionId,
        needed: u64,
        reason: &'static str,
    },
    #[error(transparent)]
    Stream(#[from] AudioError),
    #[error("read_block called from the normal world")]
    AccessDenied,
    #[error("requested {requested} frames but only {available} buffered")]
    Underflow { requested: usize, available: usize },
    #[error("malformed encoded block: {0}")]
    MalformedBlock(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub sequence: u32,
    pub frame_count: u32,
    pub payload_length: u32,
}

/// Framed PCM block handed to the PTA.
///
/// Byte image: `"TGB1" ‖ sequence ‖ frame_count ‖ payload_length` (all u32
/// LE), the interleaved PCM payload, then a trailer `text_len (u32 LE) ‖
/// UTF-8 text` carrying the secure-world transcription payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBlock {
    pub header: BlockHeader,
    pub payload: Vec<u8>,
    pub attached_text: Option<String>,
}

impl EncodedBlock {
    pub fn new(sequence: u32, frames: &[I2sFrame], attached_text: Option<String>) -> Self {
        let payload: Vec<u8> = frames.iter().flat_map(|f| f.to_le_bytes()).collect();
        Self {
            header: BlockHeader {
                sequence,
                frame_count: frames.len() as u32,
                payload_length: payload.len() as u32,
            },
            payload,
            attached_text,
        }
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(
            self.payload.len(),
            self.attached_text.as_deref().map_or(0, str::len),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.attached_text.as_deref().unwrap_or("");
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&BLOCK_MAGIC);
        out.extend_from_slice(&self.header.sequence.to_le_bytes());
        out.extend_from_slice(&self.header.frame_count.to_le_bytes());
        out.extend_from_slice(&self.header.payload_length.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DriverError> {
        let bad = |m: &str| DriverError::MalformedBlock(m.to_string());
        if bytes.len() < BLOCK_HEADER_LEN + 4 {
            return Err(bad("truncated header"));
        }
        if bytes[..4] != BLOCK_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let header = BlockHeader {
            sequence: word(4),
            frame_count: word(8),
            payload_length: word(12),
        };
        if header.payload_length as u64 != header.frame_count as u64 * BYTES_PER_FRAME as u64 {
            return Err(bad("payload_length != frame_count * 4"));
        }
        let p_end = BLOCK_HEADER_LEN + header.payload_length as usize;
        if bytes.len() < p_end + 4 {
            return Err(bad("truncated payload"));
        }
        let text_len = word(p_end) as usize;
        if bytes.len() != p_end + 4 + text_len {
            return Err(bad("trailer length mismatch"));
        }
        let text = std::str::from_utf8(&bytes[p_end + 4..])
            .map_err(|_| bad("attached text is not UTF-8"))?;
        Ok(Self {
            header,
            payload: bytes[BLOCK_HEADER_LEN..p_end].to_vec(),
            attached_text: (!text.is_empty()).then(|| text.to_string()),
        })
    }

    pub fn frames(&self) -> Vec<I2sFrame> {
        self.payload
            .chunks_exact(BYTES_PER_FRAME)
            .map(|c| {
                I2sFrame::new(
                    i16::from_le_bytes([c[0], c[1]]),
                    i16::from_le_bytes([c[2], c[3]]),
                )
            })
            .collect()
    }
}

fn joined_len(texts: &[&str]) -> usize {
    texts.iter().map(|t| t.len()).sum::<usize>() + texts.len().saturating_sub(1)
}

pub fn encoded_len(payload_len: usize, text_len: usize) -> usize {
    BLOCK_HEADER_LEN + payload_len + 4 + text_len
}

/// Driver instance bound to a slice of secure RAM.
#[derive(Debug)]
pub struct SecureDriver {
    slots: Box<[AtomicU32]>,
    /// Total frames dequeued.
    head: AtomicU64,
    /// Total frames accepted.
    tail: AtomicU64,
    overruns: AtomicU64,
    next_sequence: AtomicU32,
    /// Staged payload texts keyed by the ring index of their first frame.
    pending_text: Mutex<VecDeque<(u64, String)>>,
    region: RegionId,
    buffer_base: u64,
}

impl SecureDriver {
    /// Allocates `capacity` frames of ring storage at the start of `region`,
    /// which must be a `SecureOnly` region large enough to hold it.
    pub fn init(
        asc: &AddressSpaceController,
        region: RegionId,
        capacity: usize,
    ) -> Result<Self, DriverError> {
        let needed = capacity as u64 * BYTES_PER_FRAME as u64;
        let fail = |reason| DriverError::Allocation {
            region,
            needed,
            reason,
        };
        let r = asc.region(region).ok_or_else(|| fail("no such region"))?;
        if r.owner != Owner::SecureOnly {
            return Err(fail("region is not secure-only"));
        }
        if capacity == 0 {
            return Err(fail("zero capacity"));
        }
        if needed > r.length {
            return Err(fail("secure region too small"));
        }
        Ok(Self {
            slots: (0..capacity).map(|_| AtomicU32::new(0)).collect(),
            head: AtomicU64::new(0),
            tail: AtomicU64::new(0),
            overruns: AtomicU64::new(0),
            next_sequence: AtomicU32::new(0),
            pending_text: Mutex::new(VecDeque::new()),
            region,
            buffer_base: r.base,
        })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn region(&self) -> RegionId {
        self.region
    }

    /// `(base, length)` of the ring's backing storage.
    pub fn buffer_range(&self) -> (u64, u64) {
        (self.buffer_base, (self.capacity() * BYTES_PER_FRAME) as u64)
    }

    pub fn occupancy(&self) -> usize {
        let tail = self.tail.load(Ordering::Acquire);
        let head = self.head.load(Ordering::Acquire);
        (tail - head) as usize
    }

    pub fn overrun_count(&self) -> u64 {
        self.overruns.load(Ordering::Acquire)
    }

    pub fn next_sequence(&self) -> u32 {
        self.next_sequence.load(Ordering::Acquire)
    }

    /// Decodes `stream` and appends frames until the ring is full.
    /// Returns how many frames were accepted.
    pub fn ingest(&self, stream: &I2sBitstream) -> Result<usize, DriverError> {
        self.ingest_with_payload(stream, None)
    }

    /// Like [`ingest`](Self::ingest), additionally staging the utterance's
    /// payload text for the next [`read_block`](Self::read_block). The text
    /// is dropped if no frame was accepted.
    pub fn ingest_with_payload(
        &self,
        stream: &I2sBitstream,
        payload: Option<String>,
    ) -> Result<usize, DriverError> {
        let frames = decode_bitstream(stream, WORD_LENGTH)?;
        Ok(self.push_frames(&frames, payload))
    }

    pub(crate) fn push_frames(&self, frames: &[I2sFrame], payload: Option<String>) -> usize {
        let tail = self.tail.load(Ordering::Relaxed);
        let head = self.head.load(Ordering::Acquire);
        let free = self.capacity() - (tail - head) as usize;
        let accepted = frames.len().min(free);
        let rejected = frames.len() - accepted;
        if accepted > 0 {
            if let Some(text) = payload {
                self.pending_text.lock().unwrap().push_back((tail, text));
            }
            let cap = self.capacity() as u64;
            for (i, f) in frames[..accepted].iter().enumerate() {
                let slot = ((tail + i as u64) % cap) as usize;
                self.slots[slot].store(f.to_bits(), Ordering::Relaxed);
            }
            self.tail.store(tail + accepted as u64, Ordering::Release);
        }
        if rejected > 0 {
            self.overruns.fetch_add(rejected as u64, Ordering::AcqRel);
        }
        accepted
    }

    /// Size in bytes of the block that `read_block(n)` would produce now.
    pub fn peek_block_len(&self, n: usize) -> usize {
        let head = self.head.load(Ordering::Relaxed);
        let pending = self.pending_text.lock().unwrap();
        let texts: Vec<&str> = pending
            .iter()
            .take_while(|(start, _)| *start < head + n as u64)
            .map(|(_, t)| t.as_str())
            .collect();
        encoded_len(n * BYTES_PER_FRAME, joined_len(&texts))
    }

    /// Dequeues `n` frames into an [`EncodedBlock`]. Only secure-world callers
    /// (the PTA path) are allowed.
    pub fn read_block(&self, n: usize, caller: WorldId) -> Result<EncodedBlock, DriverError> {
        if caller != WorldId::Secure {
            return Err(DriverError::AccessDenied);
        }
        let head = self.head.load(Ordering::Relaxed);
        let tail = self.tail.load(Ordering::Acquire);
        let available = (tail - head) as usize;
        if available < n {
            return Err(DriverError::Underflow {
                requested: n,
                available,
            });
        }
        let cap = self.capacity() as u64;
        let frames: Vec<I2sFrame> = (0..n as u64)
            .map(|i| {
                I2sFrame::from_bits(self.slots[((head + i) % cap) as usize].load(Ordering::Relaxed))
            })
            .collect();
        let text = {
            let mut pending = self.pending_text.lock().unwrap();
            let mut texts = Vec::new();
            while pending
                .front()
                .is_some_and(|(start, _)| *start < head + n as u64)
            {
                texts.extend(pending.pop_front().map(|(_, t)| t));
            }
            (!texts.is_empty()).then(|| texts.join(" "))
        };
        self.head.store(head + n as u64, Ordering::Release);
        let seq = self.next_sequence.fetch_add(1, Ordering::AcqRel);
        Ok(EncodedBlock::new(seq, &frames, text))
    }
}

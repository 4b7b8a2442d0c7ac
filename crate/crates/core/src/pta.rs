//! Pseudo trusted application bridging the TA to the secure driver.
//!
//! Commands and responses have a fixed little-endian wire image:
//!
//! ```text
//! command  = session:u32 ‖ cmd_id:u32 ‖ param × 4
//! response = status:u32  ‖ param × 4
//! param    = tag:u32 ‖ 8 bytes
//!   tag 0 (none)   : 8 zero bytes
//!   tag 1 (value)  : a:u32 ‖ b:u32
//!   tag 2 (memref) : region:u16 ‖ offset:u16 ‖ length:u32
//! ```
//!
//! Invocations are serialized: one command executes at a time.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::driver::{DriverError, SecureDriver};
use crate::tee::{AddressSpaceController, RegionId, RegionMemory, TeeError, WorldContext, WorldId};

pub const CMD_READ_AUDIO: u32 = 0x01;
pub const CMD_GET_STATUS: u32 = 0x02;

pub const PARAM_LEN: usize = 12;
pub const COMMAND_LEN: usize = 8 + 4 * PARAM_LEN;
pub const RESPONSE_LEN: usize = 4 + 4 * PARAM_LEN;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Param {
    #[default]
    None,
    Value {
        a: u32,
        b: u32,
    },
    MemRef {
        region: RegionId,
        offset: u16,
        length: u32,
    },
}

impl Param {
    fn write(&self, out: &mut Vec<u8>) {
        match *self {
            Param::None => {
                out.extend_from_slice(&0u32.to_le_bytes());
                out.extend_from_slice(&[0; 8]);
            }
            Param::Value { a, b } => {
                out.extend_from_slice(&1u32.to_le_bytes());
                out.extend_from_slice(&a.to_le_bytes());
                out.extend_from_slice(&b.to_le_bytes());
            }
            Param::MemRef {
                region,
                offset,
                length,
            } => {
                out.extend_from_slice(&2u32.to_le_bytes());
                out.extend_from_slice(&region.0.to_le_bytes());
                out.extend_from_slice(&offset.to_le_bytes());
                out.extend_from_slice(&length.to_le_bytes());
            }
        }
    }

    fn read(b: &[u8]) -> Result<Self, WireError> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        match u32_at(0) {
            0 if b[4..12].iter().all(|&x| x == 0) => Ok(Param::None),
            0 => Err(WireError::NonZeroPadding),
            1 => Ok(Param::Value {
                a: u32_at(4),
                b: u32_at(8),
            }),
            2 => Ok(Param::MemRef {
                region: RegionId(u16::from_le_bytes([b[4], b[5]])),
                offset: u16::from_le_bytes([b[6], b[7]]),
                length: u32_at(8),
            }),
            tag => Err(WireError::UnknownTag(tag)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unknown param tag {0}")]
    UnknownTag(u32),
    #[error("none param with non-zero payload")]
    NonZeroPadding,
    #[error("error response carries out-params")]
    ParamsOnError,
}

fn read_params(b: &[u8]) -> Result<[Param; 4], WireError> {
    let mut params = [Param::None; 4];
    for (i, p) in params.iter_mut().enumerate() {
        *p = Param::read(&b[i * PARAM_LEN..(i + 1) * PARAM_LEN])?;
    }
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PtaCommand {
    pub session: u32,
    pub cmd_id: u32,
    pub params: [Param; 4],
}

impl PtaCommand {
    pub fn new(session: u32, cmd_id: u32, params: [Param; 4]) -> Self {
        Self {
            session,
            cmd_id,
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(COMMAND_LEN);
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.cmd_id.to_le_bytes());
        for p in &self.params {
            p.write(&mut out);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        if b.len() != COMMAND_LEN {
            return Err(WireError::Length {
                expected: COMMAND_LEN,
                got: b.len(),
            });
        }
        Ok(Self {
            session: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            cmd_id: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            params: read_params(&b[8..])?,
        })
    }
}

/// Result codes, numerically aligned with the GlobalPlatform TEE client API.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    AccessDenied,
    BadFormat,
    BadParameters,
    BadSession,
    UnknownCommand,
    NoData,
    ShortBuffer,
    Generic,
}

impl Status {
    pub fn code(self) -> u32 {
        match self {
            Status::Ok => 0,
            Status::Generic => 0xFFFF_0000,
            Status::AccessDenied => 0xFFFF_0001,
            Status::BadFormat => 0xFFFF_0005,
            Status::BadParameters => 0xFFFF_0006,
            Status::BadSession => 0xFFFF_0007,
            Status::UnknownCommand => 0xFFFF_000A,
            Status::NoData => 0xFFFF_000B,
            Status::ShortBuffer => 0xFFFF_0010,
        }
    }

    pub fn from_code(code: u32) -> Self {
        match code {
            0 => Status::Ok,
            0xFFFF_0001 => Status::AccessDenied,
            0xFFFF_0005 => Status::BadFormat,
            0xFFFF_0006 => Status::BadParameters,
            0xFFFF_0007 => Status::BadSession,
            0xFFFF_000A => Status::UnknownCommand,
            0xFFFF_000B => Status::NoData,
            0xFFFF_0010 => Status::ShortBuffer,
            _ => Status::Generic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PtaResponse {
    pub status: u32,
    pub params: [Param; 4],
}

impl PtaResponse {
    pub fn ok(params: [Param; 4]) -> Self {
        Self { status: 0, params }
    }

    pub fn error(status: Status) -> Self {
        Self {
            status: status.code(),
            params: [Param::None; 4],
        }
    }

    pub fn status(&self) -> Status {
        Status::from_code(self.status)
    }

    pub fn is_ok(&self) -> bool {
        self.status == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RESPONSE_LEN);
        out.extend_from_slice(&self.status.to_le_bytes());
        for p in &self.params {
            p.write(&mut out);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        if b.len() != RESPONSE_LEN {
            return Err(WireError::Length {
                expected: RESPONSE_LEN,
                got: b.len(),
            });
        }
        let status = u32::from_le_bytes(b[0..4].try_into().unwrap());
        let params = read_params(&b[4..])?;
        if status != 0 && params.iter().any(|p| *p != Param::None) {
            return Err(WireError::ParamsOnError);
        }
        Ok(Self { status, params })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PtaError {
    #[error("no such session")]
    BadSession,
    #[error("PTA returned {0:?}")]
    Status(Status),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Memory(#[from] TeeError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

/// Command/response pairs captured for golden replay, one hex pair per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayLog {
    pub entries: Vec<(PtaCommand, PtaResponse)>,
}

impl ReplayLog {
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(c, r)| {
                format!(
                    "{} {}\n",
                    hex::encode(c.to_bytes()),
                    hex::encode(r.to_bytes())
                )
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ctx = |e: &dyn fmt::Display| format!("line {}: {e}", n + 1);
            let (c, r) = line
                .split_once(' ')
                .ok_or_else(|| ctx(&"expected two fields"))?;
            let c = hex::decode(c).map_err(|e| ctx(&e))?;
            let r = hex::decode(r).map_err(|e| ctx(&e))?;
            entries.push((
                PtaCommand::from_bytes(&c).map_err(|e| ctx(&e))?,
                PtaResponse::from_bytes(&r).map_err(|e| ctx(&e))?,
            ));
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Default)]
struct BridgeState {
    sessions: BTreeSet<u32>,
    next_session: u32,
    memory: RegionMemory,
    log: Option<ReplayLog>,
}

/// The PTA instance. Owns the mediated view of TA buffers.
#[derive(Debug)]
pub struct PtaBridge {
    asc: Arc<AddressSpaceController>,
    driver: Arc<SecureDriver>,
    state: Mutex<BridgeState>,
}

impl PtaBridge {
    pub fn new(asc: Arc<AddressSpaceController>, driver: Arc<SecureDriver>) -> Self {
        Self {
            asc,
            driver,
            state: Mutex::new(BridgeState {
                next_session: 1,
                ..BridgeState::default()
            }),
        }
    }

    pub fn driver(&self) -> &SecureDriver {
        &self.driver
    }

    pub fn asc(&self) -> &AddressSpaceController {
        &self.asc
    }

    pub fn record_replay(&self, on: bool) {
        self.state.lock().unwrap().log = on.then(ReplayLog::default);
    }

    pub fn take_replay(&self) -> Option<ReplayLog> {
        let mut st = self.state.lock().unwrap();
        let log = st.log.take();
        if log.is_some() {
            st.log = Some(ReplayLog::default());
        }
        log
    }

    pub fn live_sessions(&self) -> usize {
        self.state.lock().unwrap().sessions.len()
    }

    /// Returns a fresh, non-zero session id.
    pub fn open_session(&self) -> u32 {
        let mut st = self.state.lock().unwrap();
        let mut id = st.next_session;
        while id == 0 || st.sessions.contains(&id) {
            id = id.wrapping_add(1);
        }
        st.sessions.insert(id);
        st.next_session = id.wrapping_add(1);
        id
    }

    pub fn close_session(&self, session: u32) -> Result<(), PtaError> {
        if self.state.lock().unwrap().sessions.remove(&session) {
            Ok(())
        } else {
            Err(PtaError::BadSession)
        }
    }

    /// Executes one command. Never switches worlds: both the TA and the PTA
    /// run on the secure side, so `ctx` is only inspected.
    pub fn invoke(&self, cmd: &PtaCommand, ctx: &WorldContext) -> PtaResponse {
        let mut st = self.state.lock().unwrap();
        let resp = self.dispatch(&mut st, cmd, ctx);
        if let Some(log) = st.log.as_mut() {
            log.entries.push((*cmd, resp));
        }
        resp
    }

    /// Byte-level entry point; undecodable commands yield `BadFormat`.
    pub fn invoke_bytes(&self, bytes: &[u8], ctx: &WorldContext) -> Vec<u8> {
        match PtaCommand::from_bytes(bytes) {
            Ok(cmd) => self.invoke(&cmd, ctx).to_bytes(),
            Err(_) => PtaResponse::error(Status::BadFormat).to_bytes(),
        }
    }

    fn dispatch(&self, st: &mut BridgeState, cmd: &PtaCommand, ctx: &WorldContext) -> PtaResponse {
        if ctx.current() != WorldId::Secure {
            return PtaResponse::error(Status::AccessDenied);
        }
        if cmd.session == 0 || !st.sessions.contains(&cmd.session) {
            return PtaResponse::error(Status::BadSession);
        }
        match cmd.cmd_id {
            CMD_GET_STATUS => {
                let occupancy = self.driver.occupancy() as u32;
                let overruns = self.driver.overrun_count().min(u32::MAX as u64) as u32;
                PtaResponse::ok([
                    Param::Value {
                        a: occupancy,
                        b: self.driver.capacity() as u32,
                    },
                    Param::Value { a: overruns, b: 0 },
                    Param::None,
                    Param::None,
                ])
            }
            CMD_READ_AUDIO => self.read_audio(st, cmd),
            _ => PtaResponse::error(Status::UnknownCommand),
        }
    }

    fn read_audio(&self, st: &mut BridgeState, cmd: &PtaCommand) -> PtaResponse {
        let (region, offset, length) = match cmd.params[0] {
            Param::MemRef {
                region,
                offset,
                length,
            } => (region, offset, length),
            _ => return PtaResponse::error(Status::BadParameters),
        };
        let n = match cmd.params[1] {
            Param::Value { a, .. } => a as usize,
            _ => return PtaResponse::error(Status::BadParameters),
        };
        match self.asc.region(region) {
            Some(r) if offset as u64 + length as u64 <= r.length => {}
            _ => return PtaResponse::error(Status::BadParameters),
        }
        if n == 0 || self.driver.occupancy() < n {
            return PtaResponse::error(Status::NoData);
        }
        let needed = self.driver.peek_block_len(n);
        if (length as usize) < needed {
            return PtaResponse::error(Status::ShortBuffer);
        }
        let block = match self.driver.read_block(n, WorldId::Secure) {
            Ok(b) => b,
            Err(DriverError::Underflow { .. }) => return PtaResponse::error(Status::NoData),
            Err(_) => return PtaResponse::error(Status::Generic),
        };
        let bytes = block.to_bytes();
        match st
            .memory
            .write(&self.asc, WorldId::Secure, region, offset as u64, &bytes)
        {
            Ok(()) => PtaResponse::ok([
                Param::MemRef {
                    region,
                    offset,
                    length: bytes.len() as u32,
                },
                Param::Value {
                    a: block.header.frame_count,
                    b: block.header.sequence,
                },
                Param::None,
                Param::None,
            ]),
            Err(TeeError::AccessDenied { .. }) => PtaResponse::error(Status::AccessDenied),
            Err(_) => PtaResponse::error(Status::BadParameters),
        }
    }

    /// Reads back a memref the PTA filled, with `world` access mediation.
    pub fn read_memref(&self, world: WorldId, memref: Param) -> Result<Vec<u8>, PtaError> {
        match memref {
            Param::MemRef {
                region,
                offset,
                length,
            } => Ok(self.state.lock().unwrap().memory.read(
                &self.asc,
                world,
                region,
                offset as u64,
                length as u64,
            )?),
            _ => Err(PtaError::Status(Status::BadParameters)),
        }
    }
}

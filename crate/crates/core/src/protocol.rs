//! Framed wire protocol between scan units and the central unit.
//!
//! A frame is a 4-byte big-endian payload length followed by a canonical
//! JSON object (sorted keys, no whitespace). Every payload carries `"v": 1`
//! and a type tag `"t"`. Scan-in and scan-out units use the same messages;
//! the scan's `kind` says which way the operator is going.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::allocator::{AckOutcome, RejectReason};
use crate::canonical::value_to_canonical_string;
use crate::domain::{OperatorId, ScanEvent, UnitId};
use crate::state::DisplayBoard;

pub const PROTOCOL_VERSION: u64 = 1;
pub const MAX_PAYLOAD: usize = 65_536;
pub const LENGTH_PREFIX: usize = 4;
/// Size budget for a complete scan frame, prefix included.
pub const SCAN_FRAME_BUDGET: usize = 256;

const MESSAGE_TYPES: [&str; 8] = ["hello", "scan", "ack", "reject", "board", "notify", "ping", "pong"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Scan,
    /// Read-only board subscriber.
    Display,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    Hello { unit_id: UnitId, role: Role },
    Scan { scan: ScanEvent },
    Ack { unit_id: UnitId, unit_seq: u64, outcome: AckOutcome },
    Reject { unit_id: UnitId, unit_seq: u64, reason: RejectReason },
    Board { board: DisplayBoard },
    Notify { operator: OperatorId, text: String },
    Ping,
    Pong,
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::Scan { .. } => "scan",
            WireMessage::Ack { .. } => "ack",
            WireMessage::Reject { .. } => "reject",
            WireMessage::Board { .. } => "board",
            WireMessage::Notify { .. } => "notify",
            WireMessage::Ping => "ping",
            WireMessage::Pong => "pong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("malformed payload: {0}")]
    BadJson(String),
    #[error("unsupported protocol version {0}")]
    BadVersion(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

/// Canonical payload text of a message (what goes inside a frame).
pub fn encode_payload(msg: &WireMessage) -> String {
    let mut v = serde_json::to_value(msg).expect("wire messages always serialize");
    if let Value::Object(map) = &mut v {
        map.insert("v".into(), Value::from(PROTOCOL_VERSION));
    }
    value_to_canonical_string(&v)
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, FrameError> {
    frame_payload(encode_payload(msg).as_bytes())
}

/// Prefixes raw payload bytes with their length.
pub fn frame_payload(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(LENGTH_PREFIX + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Message { msg: WireMessage, consumed: usize },
    /// Not enough bytes for a whole frame yet; nothing consumed.
    NeedMoreBytes,
}

/// Decodes the first complete frame in `buf`, if any.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, FrameError> {
    let Some(prefix) = buf.get(..LENGTH_PREFIX) else {
        return Ok(Decoded::NeedMoreBytes);
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("4-byte slice")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(len));
    }
    let Some(payload) = buf.get(LENGTH_PREFIX..LENGTH_PREFIX + len) else {
        return Ok(Decoded::NeedMoreBytes);
    };
    Ok(Decoded::Message {
        msg: decode_payload(payload)?,
        consumed: LENGTH_PREFIX + len,
    })
}

pub fn decode_payload(payload: &[u8]) -> Result<WireMessage, FrameError> {
    let mut v: Value = serde_json::from_slice(payload).map_err(|e| FrameError::BadJson(e.to_string()))?;
    let Value::Object(map) = &mut v else {
        return Err(FrameError::BadJson("payload is not an object".into()));
    };
    match map.remove("v") {
        Some(ver) if ver.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(ver) => return Err(FrameError::BadVersion(ver.to_string())),
        None => return Err(FrameError::BadVersion("missing".into())),
    }
    match map.get("t").and_then(Value::as_str) {
        Some(t) if MESSAGE_TYPES.contains(&t) => {}
        Some(t) => return Err(FrameError::UnknownType(t.to_owned())),
        None => return Err(FrameError::UnknownType(String::new())),
    }
    let msg: WireMessage = serde_json::from_value(v).map_err(|e| FrameError::BadJson(e.to_string()))?;
    if let WireMessage::Scan { scan } = &msg {
        scan.validate().map_err(|e| FrameError::BadJson(e.to_string()))?;
    }
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    FirstDelivery,
    Duplicate,
}

/// Per-unit record of scans already accepted by the central unit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupeLedger {
    seen: BTreeMap<UnitId, BTreeSet<u64>>,
}

impl DedupeLedger {
    pub fn from_applied(applied: &BTreeMap<UnitId, BTreeSet<u64>>) -> Self {
        DedupeLedger { seen: applied.clone() }
    }

    /// Records the key on first sight.
    pub fn dedupe_check(&mut self, unit: &UnitId, seq: u64) -> Delivery {
        if self.seen.entry(unit.clone()).or_default().insert(seq) {
            Delivery::FirstDelivery
        } else {
            Delivery::Duplicate
        }
    }

    pub fn mirrors(&self, applied: &BTreeMap<UnitId, BTreeSet<u64>>) -> bool {
        let nonempty = |m: &BTreeMap<UnitId, BTreeSet<u64>>| {
            m.iter().filter(|(_, s)| !s.is_empty()).map(|(k, s)| (k.clone(), s.clone())).collect::<Vec<_>>()
        };
        nonempty(&self.seen) == nonempty(applied)
    }
}

/// Sender retransmission schedule: exponential backoff with a cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub initial_ms: u64,
    pub factor: u64,
    pub cap_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial_ms: 1_000,
            factor: 2,
            cap_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Wait after the `attempt`-th transmission (1-based) before resending.
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        let mut d = self.initial_ms;
        for _ in 1..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap_ms {
                return self.cap_ms;
            }
        }
        d.min(self.cap_ms)
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("connection closed mid-frame")]
    Truncated,
}

/// Incremental frame reader over a blocking byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader { inner, buf: Vec::new() }
    }

    /// Next message, or `None` on a clean end of stream.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, ReadError> {
        let mut chunk = [0u8; 4096];
        loop {
            if let Decoded::Message { msg, consumed } = decode_frame(&self.buf)? {
                self.buf.drain(..consumed);
                return Ok(Some(msg));
            }
            let n = self.inner.read(&mut chunk)?;
            if n == 0 {
                return if self.buf.is_empty() { Ok(None) } else { Err(ReadError::Truncated) };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> io::Result<()> {
    let frame = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    w.write_all(&frame)?;
    w.flush()
}

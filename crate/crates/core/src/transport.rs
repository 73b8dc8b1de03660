//! Message schema, wire framing and the simulated network.
//!
//! A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
//! object. The object always has `type`, `sender` and `seq` keys; the
//! remaining keys depend on the variant:
//!
//! | type | body keys |
//! |------|-----------|
//! | `Register` | `profile`, `telemetry` |
//! | `Heartbeat` | `telemetry` |
//! | `Telemetry` | `snapshot` |
//! | `AssignTask` | `task_id`, `attempt`, `workload`, `params`, `start_cursor`, `state`, `checkpoint_interval_s` |
//! | `CheckpointUpload` | `task_id`, `attempt`, `state` |
//! | `CommitResult` | `task_id`, `attempt`, `result`, `busy_s` |
//! | `Ack` | `ack_seq`, `task_id` |
//! | `Reject` | `ack_seq`, `task_id`, `reason` |
//! | `DisconnectNotice` | `reason` |

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TaskState;
use crate::codec::hex_bytes;
use crate::fleet::{DeviceProfile, TelemetrySnapshot, WorkerId};
use crate::rng::SimRng;
use crate::workloads::{SliceParams, WorkloadSpec};

/// Largest accepted payload, in bytes.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// Sender id used by the coordinator.
pub const COORDINATOR_ID: &str = "coordinator";

pub const MESSAGE_TYPES: [&str; 9] = [
    "Register",
    "Heartbeat",
    "Telemetry",
    "AssignTask",
    "CheckpointUpload",
    "CommitResult",
    "Ack",
    "Reject",
    "DisconnectNotice",
];

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("empty frame")]
    Empty,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The sender does not own the task (or the attempt is outdated).
    Stale,
    /// The sender is not a connected worker and must register again.
    NotRegistered,
    /// The message referenced something the receiver does not know.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Body {
    Register {
        profile: DeviceProfile,
        telemetry: Option<TelemetrySnapshot>,
    },
    Heartbeat {
        telemetry: Option<TelemetrySnapshot>,
    },
    Telemetry {
        snapshot: TelemetrySnapshot,
    },
    AssignTask {
        task_id: u64,
        attempt: u32,
        workload: WorkloadSpec,
        params: SliceParams,
        start_cursor: u64,
        /// Recovered state for resumed tasks; `None` starts from scratch.
        state: Option<TaskState>,
        /// `None` when checkpointing is off.
        checkpoint_interval_s: Option<f64>,
    },
    CheckpointUpload {
        task_id: u64,
        attempt: u32,
        state: TaskState,
    },
    CommitResult {
        task_id: u64,
        attempt: u32,
        #[serde(with = "hex_bytes")]
        result: Vec<u8>,
        /// Compute seconds the worker spent on this attempt.
        busy_s: f64,
    },
    Ack {
        ack_seq: u64,
        task_id: Option<u64>,
    },
    Reject {
        ack_seq: u64,
        task_id: Option<u64>,
        reason: RejectReason,
    },
    DisconnectNotice {
        reason: String,
    },
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Register { .. } => "Register",
            Body::Heartbeat { .. } => "Heartbeat",
            Body::Telemetry { .. } => "Telemetry",
            Body::AssignTask { .. } => "AssignTask",
            Body::CheckpointUpload { .. } => "CheckpointUpload",
            Body::CommitResult { .. } => "CommitResult",
            Body::Ack { .. } => "Ack",
            Body::Reject { .. } => "Reject",
            Body::DisconnectNotice { .. } => "DisconnectNotice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: WorkerId,
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

/// Per-sender sequence counter; numbers start at 1 and strictly increase.
#[derive(Debug, Clone, Default)]
pub struct Outgoing {
    sender: WorkerId,
    next: u64,
}

impl Outgoing {
    pub fn new(sender: impl Into<WorkerId>) -> Self {
        Self {
            sender: sender.into(),
            next: 1,
        }
    }

    pub fn stamp(&mut self, body: Body) -> Message {
        let seq = self.next;
        self.next += 1;
        Message {
            sender: self.sender.clone(),
            seq,
            body,
        }
    }
}

/// Frames an already serialized payload.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Returns the payload of the single frame in `bytes`.
pub fn unframe(bytes: &[u8]) -> Result<&[u8], FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated {
            needed: 4,
            have: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let rest = &bytes[4..];
    match rest.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(FrameError::Truncated {
            needed: len,
            have: rest.len(),
        }),
        std::cmp::Ordering::Greater => Err(FrameError::Trailing(rest.len() - len)),
        std::cmp::Ordering::Equal => Ok(rest),
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    frame(&serde_json::to_vec(msg).expect("messages always serialize"))
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    decode_payload(unframe(bytes)?)
}

pub fn decode_payload(payload: &[u8]) -> Result<Message, CodecError> {
    let value: serde_json::Value = serde_json::from_slice(payload)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| ProtocolError::Malformed("missing \"type\" field".into()))?;
    if !MESSAGE_TYPES.contains(&kind) {
        return Err(ProtocolError::UnknownType(kind.to_string()).into());
    }
    Ok(serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))?)
}

/// Writes any serializable value as one frame.
pub fn write_json_frame<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    let payload = serde_json::to_vec(value).map_err(io::Error::other)?;
    w.write_all(&frame(&payload))
}

/// Reads one frame's payload. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated { needed: 4, have: got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated {
            needed: len,
            have: 0,
        },
        _ => FrameError::Io(e),
    })?;
    Ok(Some(payload))
}

pub fn read_json_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<Option<T>, CodecError> {
    match read_frame(r)? {
        None => Ok(None),
        Some(payload) => serde_json::from_slice(&payload)
            .map(Some)
            .map_err(|e| ProtocolError::Malformed(e.to_string()).into()),
    }
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, CodecError> {
    match read_frame(r)? {
        None => Ok(None),
        Some(payload) => decode_payload(&payload).map(Some),
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid link model: {0}")]
pub struct LinkError(pub String);

/// Latency, loss and partition behaviour of one worker's link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub base_latency_s: f64,
    pub jitter_s: f64,
    pub drop_probability: f64,
    /// Half-open `[from, to)` windows during which every send is lost.
    pub partitions: Vec<(f64, f64)>,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            base_latency_s: 0.005,
            jitter_s: 0.0,
            drop_probability: 0.0,
            partitions: Vec::new(),
        }
    }
}

impl LinkModel {
    pub fn ideal() -> Self {
        Self {
            base_latency_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.base_latency_s.is_finite() && self.base_latency_s >= 0.0) {
            return Err(LinkError("base_latency_s must be >= 0".into()));
        }
        if !(self.jitter_s.is_finite() && self.jitter_s >= 0.0) {
            return Err(LinkError("jitter_s must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(LinkError("drop_probability must be in [0, 1)".into()));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for &(from, to) in &self.partitions {
            if !(from.is_finite() && to.is_finite() && from < to) {
                return Err(LinkError(format!("bad partition window ({from}, {to})")));
            }
            if from < prev_end {
                return Err(LinkError("partition windows overlap or are unordered".into()));
            }
            prev_end = to;
        }
        Ok(())
    }

    pub fn partitioned_at(&self, t: f64) -> bool {
        self.partitions.iter().any(|&(from, to)| from <= t && t < to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    Delivered(f64),
    Dropped,
}

/// Fate of a single send on `link`, ignoring FIFO ordering.
///
/// Two variates are drawn per call (loss, then jitter) whatever the outcome,
/// so the generator position depends only on the number of sends.
pub fn deliver(link: &LinkModel, send_time_s: f64, rng: &mut SimRng) -> Delivery {
    let loss: f64 = rng.random();
    let jitter: f64 = rng.random();
    if link.partitioned_at(send_time_s) || loss < link.drop_probability {
        return Delivery::Dropped;
    }
    Delivery::Delivered(send_time_s + link.base_latency_s + jitter * link.jitter_s)
}

/// Deterministic in-memory network with per-link FIFO delivery.
///
/// Each worker has one link model, used for both directions.
#[derive(Debug, Clone)]
pub struct SimNetwork {
    default_link: LinkModel,
    links: BTreeMap<WorkerId, LinkModel>,
    last_delivery: BTreeMap<(WorkerId, WorkerId), f64>,
    rng: SimRng,
    sent: u64,
    dropped: u64,
}

impl SimNetwork {
    pub fn new(default_link: LinkModel, rng: SimRng) -> Self {
        Self {
            default_link,
            links: BTreeMap::new(),
            last_delivery: BTreeMap::new(),
            rng,
            sent: 0,
            dropped: 0,
        }
    }

    pub fn set_link(&mut self, worker: impl Into<WorkerId>, link: LinkModel) {
        self.links.insert(worker.into(), link);
    }

    pub fn link(&self, worker: &str) -> &LinkModel {
        self.links.get(worker).unwrap_or(&self.default_link)
    }

    /// Sends from `from` to `to` at `now`; returns the arrival time if the
    /// message survives. Arrivals on one directed link never reorder.
    pub fn send(&mut self, from: &str, to: &str, now: f64) -> Option<f64> {
        let worker = if from == COORDINATOR_ID { to } else { from };
        let link = self.links.get(worker).unwrap_or(&self.default_link);
        self.sent += 1;
        match deliver(link, now, &mut self.rng) {
            Delivery::Dropped => {
                self.dropped += 1;
                None
            }
            Delivery::Delivered(at) => {
                let last = self
                    .last_delivery
                    .entry((from.to_string(), to.to_string()))
                    .or_insert(f64::NEG_INFINITY);
                let at = at.max(*last);
                *last = at;
                Some(at)
            }
        }
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.sent, self.dropped)
    }
}

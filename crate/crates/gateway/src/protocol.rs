//! Wire protocol: one JSON [`WireMessage`] per WebSocket text frame.
//!
//! ```json
//! {"version":1,"seq":7,"ts":1700000000000,"type":"MaxLimitOverride",
//!  "payload":{"gantry_ids":["G12"],"max_limit":45}}
//! ```

use serde::{Deserialize, Serialize};
use vsl_core::guard::{Decision, GuardConfig};
use vsl_core::log::LoopMode;
use vsl_core::sim::SensorReading;
use vsl_core::CorridorConfig;

use crate::state::OverrideState;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub version: u32,
    /// Strictly increasing per connection and direction.
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl WireMessage {
    pub fn new(seq: u64, body: Body) -> Self {
        WireMessage { version: PROTOCOL_VERSION, seq, ts: now_ms(), body }
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum Body {
    SensorBatch(SensorBatch),
    DecisionBatch(DecisionBatch),
    IncidentCommand(IncidentCommand),
    MaxLimitOverride(MaxLimitOverride),
    GuardToggle(GuardToggle),
    Heartbeat(Heartbeat),
    Snapshot(Box<SnapshotPayload>),
    Ack(Ack),
    Error(ErrorPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBatch {
    pub tick: u64,
    pub t_s: f64,
    pub readings: Vec<SensorReading>,
}

/// Every gantry's decision for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionBatch {
    pub tick: u64,
    pub t_s: f64,
    pub degraded: bool,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentCommand {
    #[serde(default)]
    pub id: Option<String>,
    pub milepost: f64,
    /// Simulation time; omitted means the next tick boundary.
    #[serde(default)]
    pub start_s: Option<f64>,
    pub duration_s: f64,
    /// Remaining fraction of capacity, in [0, 1).
    pub capacity_fraction: f64,
}

/// Sets (or with `max_limit: null` clears) the operator maximum of gantries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLimitOverride {
    pub gantry_ids: Vec<String>,
    pub max_limit: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GuardStage {
    Sm,
    Mslc,
    Db,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardToggle {
    pub stage: GuardStage,
    pub enabled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    #[serde(default)]
    pub tick: Option<u64>,
}

/// Full state for bootstrapping a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub corridor_digest: String,
    pub corridor: CorridorConfig,
    pub mode: LoopMode,
    /// Last completed tick; 0 before the first.
    pub tick: u64,
    pub t_s: f64,
    pub guard: GuardConfig,
    pub overrides: OverrideState,
    pub latest: Option<DecisionBatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    /// Sequence number of the acknowledged command.
    pub ack_seq: u64,
    /// Tick whose decisions first reflect the command.
    pub applies_at_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    BadSequence,
    NotACommand,
    UnknownGantry,
    OutOfRange,
    MslcRequired,
    NotClosedLoop,
    Degraded,
    SlowClient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub ref_seq: Option<u64>,
    pub code: ErrorCode,
    pub reason: String,
}

impl ErrorPayload {
    pub fn new(ref_seq: Option<u64>, code: ErrorCode, reason: impl Into<String>) -> Self {
        ErrorPayload { ref_seq, code, reason: reason.into() }
    }
}

/// Parses a client frame, reporting the offending `seq` when it is readable.
pub fn parse_message(text: &str) -> Result<WireMessage, ErrorPayload> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ErrorPayload::new(None, ErrorCode::Malformed, e.to_string()))?;
    let seq = value.get("seq").and_then(|s| s.as_u64());
    match value.get("version").and_then(|v| v.as_u64()) {
        None => return Err(ErrorPayload::new(seq, ErrorCode::Malformed, "missing version")),
        Some(v) if v != PROTOCOL_VERSION as u64 => {
            return Err(ErrorPayload::new(seq, ErrorCode::UnsupportedVersion, format!("version {v}")))
        }
        Some(_) => {}
    }
    serde_json::from_value(value).map_err(|e| ErrorPayload::new(seq, ErrorCode::Malformed, e.to_string()))
}

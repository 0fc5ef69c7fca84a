//! Long-running decision service: pulls sensor data from a live simulation
//! or a recorded log, runs the guarded policy every control period, persists
//! the decision log and serves operator consoles over WebSocket.

pub mod engine;
pub mod error;
pub mod feed;
pub mod protocol;
pub mod server;
pub mod state;

pub use engine::{load_policy, Engine, TickReport};
pub use error::GatewayError;
pub use feed::{ingest_fixture, Feed, FeedTick, ReplayFeed, SimFeed};
pub use protocol::{Body, DecisionBatch, ErrorCode, SensorBatch, SnapshotPayload, WireMessage, PROTOCOL_VERSION};
pub use server::{start, GatewayConfig, GatewayHandle};
pub use state::{Command, OverrideState};

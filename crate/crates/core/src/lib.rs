//! Multi-agent variable speed limit control for a freeway corridor.
//!
//! Numerics that belong to the learned controller (network, training,
//! speed fields) are generic over [`Scalar`]; traffic measurements and
//! posted limits are `f64` and `u16` throughout.

pub mod corridor;
pub mod error;
pub mod eval;
pub mod guard;
pub mod log;
pub mod policy;
pub mod scalar;
pub mod sim;
pub mod train;

pub use corridor::{CorridorConfig, Direction, Gantry, Sensor, SpeedLimit};
pub use error::{ConfigError, PolicyError, SimError};
pub use scalar::Scalar;

/// Double-precision policy, the on-disk default.
pub type Policy = policy::PolicyParameters<f64>;
/// Single-precision policy.
pub type PolicyF32 = policy::PolicyParameters<f32>;

//! Shared multi-agent policy: observation construction, the actor network,
//! invalid-action masking and the sequential decision sweep.

mod masking;
pub mod mlp;
mod observation;
mod params;
mod sweep;

pub use masking::{action_mask, invalid_actions, MaskedDistribution, Selection};
pub use mlp::{Adam, Dense, Mlp, Trace};
pub use observation::{build_observation, NormBounds, Observation, RawObservation, TrafficState};
pub use params::{PolicyParameters, DEFAULT_HIDDEN};
pub use sweep::{act, sequential_sweep, ActOutcome, SweepStep};

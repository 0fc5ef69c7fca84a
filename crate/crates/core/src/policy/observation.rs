use serde::{Deserialize, Serialize};

use crate::corridor::SpeedLimit;
use crate::scalar::Scalar;

/// Min-max bounds used to rescale observation features to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub o_min: f64,
    pub o_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for NormBounds {
    fn default() -> Self {
        NormBounds { v_min: 0.0, v_max: 80.0, o_min: 0.0, o_max: 1.0, a_min: 30.0, a_max: 70.0 }
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn unscale(y: f64, lo: f64, hi: f64) -> f64 {
    lo + y * (hi - lo)
}

impl NormBounds {
    pub fn normalize(&self, raw: &RawObservation) -> [f64; 5] {
        [
            scale(raw.v, self.v_min, self.v_max),
            scale(raw.o, self.o_min, self.o_max),
            scale(raw.v_up, self.v_min, self.v_max),
            scale(raw.o_up, self.o_min, self.o_max),
            scale(raw.a_down, self.a_min, self.a_max),
        ]
    }

    pub fn denormalize(&self, x: &[f64; 5]) -> RawObservation {
        RawObservation {
            v: unscale(x[0], self.v_min, self.v_max),
            o: unscale(x[1], self.o_min, self.o_max),
            v_up: unscale(x[2], self.v_min, self.v_max),
            o_up: unscale(x[3], self.o_min, self.o_max),
            a_down: unscale(x[4], self.a_min, self.a_max),
        }
    }
}

/// Unnormalized local view of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawObservation {
    pub v: f64,
    pub o: f64,
    pub v_up: f64,
    pub o_up: f64,
    pub a_down: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub raw: RawObservation,
    pub features: [T; 5],
}

impl<T: Scalar> Observation<T> {
    pub fn features_f64(&self) -> [f64; 5] {
        self.features.map(Scalar::f64)
    }
}

/// Speed/occupancy pair read from one sensor window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficState {
    pub speed: f64,
    pub occupancy: f64,
}

/// Builds the 5-feature observation `[v, o, v_up, o_up, a_down]`.
pub fn build_observation<T: Scalar>(
    own: TrafficState,
    upstream: TrafficState,
    a_down: SpeedLimit,
    bounds: &NormBounds,
) -> Observation<T> {
    let raw = RawObservation {
        v: own.speed,
        o: own.occupancy,
        v_up: upstream.speed,
        o_up: upstream.occupancy,
        a_down: a_down.as_f64(),
    };
    Observation { raw, features: bounds.normalize(&raw).map(T::of) }
}

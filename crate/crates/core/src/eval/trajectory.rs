//! Virtual vehicles driven through a speed field.

use serde::{Deserialize, Serialize};

use super::field::SpeedField;
use crate::error::EvalError;
use crate::scalar::Scalar;

/// Integration step.
pub const TRAJECTORY_STEP_S: f64 = 1.0;
/// Lower bound on the speed used to advance, so jams cannot stall a vehicle.
pub const FLOOR_SPEED_MPH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTrajectory {
    pub departure_t_s: f64,
    pub lane: usize,
    /// `(t_s, x_mi, v_mph)` with `v` the field speed at `(t, x)`.
    pub samples: Vec<(f64, f64, f64)>,
}

impl VirtualTrajectory {
    /// Time at which the vehicle reaches `x`, interpolated between samples.
    pub fn crossing_time(&self, x: f64) -> Option<f64> {
        let s = &self.samples;
        if s.first()?.1 > x {
            return None;
        }
        let j = s.iter().position(|p| p.1 >= x)?;
        if j == 0 {
            return Some(s[0].0);
        }
        let (a, b) = (s[j - 1], s[j]);
        Some(a.0 + (x - a.1) / (b.1 - a.1) * (b.0 - a.0))
    }

    /// Lowest sampled speed with position in `[x0, x1]`.
    pub fn min_speed_between(&self, x0: f64, x1: f64) -> Option<f64> {
        self.samples
            .iter()
            .filter(|p| p.1 >= x0 && p.1 <= x1)
            .map(|p| p.2)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.min(v))))
    }

    pub fn end_x(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |p| p.1)
    }
}

/// Forward-Euler integration of `dx/dt = v(t, x)` from `(depart_t, start_x)`
/// until the vehicle leaves the field in space or time.
pub fn virtual_trajectory<T: Scalar>(
    field: &SpeedField<T>,
    depart_t: f64,
    lane: usize,
    start_x: f64,
) -> Result<VirtualTrajectory, EvalError> {
    let v0 = field.sample(depart_t, start_x, lane).ok_or(EvalError::OutsideField { t: depart_t, x: start_x })?.f64();
    let x_end = field.x_end();
    let t_end = field.t_end();
    let mut samples = vec![(depart_t, start_x, v0)];
    let (mut t, mut x, mut v) = (depart_t, start_x, v0);
    loop {
        let step = v.max(FLOOR_SPEED_MPH);
        let x_next = x + step * TRAJECTORY_STEP_S / 3600.0;
        if x_next >= x_end {
            let t_hit = t + (x_end - x) / step * 3600.0;
            if t_hit <= t_end && x_end > x {
                let v_hit = field.sample(t_hit, x_end, lane).map_or(v, T::f64);
                samples.push((t_hit, x_end, v_hit));
            }
            break;
        }
        let t_next = t + TRAJECTORY_STEP_S;
        match field.sample(t_next, x_next, lane) {
            Some(vn) => {
                t = t_next;
                x = x_next;
                v = vn.f64();
                samples.push((t, x, v));
            }
            None => break,
        }
    }
    Ok(VirtualTrajectory { departure_t_s: depart_t, lane, samples })
}

//! Speed matching, maximum-limit correction and debouncing.

use crate::corridor::SpeedLimit;

/// Rounds a measured speed up to the next multiple of 10: `(⌊x/10⌋ + 1)·10`.
pub fn round_up_ten(speed_mph: f64) -> u16 {
    let x = speed_mph.max(0.0).min(1000.0);
    (((x / 10.0).floor() + 1.0) * 10.0) as u16
}

/// Thresholds used by speed matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchBounds {
    pub min: SpeedLimit,
    pub max: SpeedLimit,
    pub a_diff: u16,
    pub o_thred: f64,
}

impl Default for MatchBounds {
    fn default() -> Self {
        MatchBounds { min: SpeedLimit(30), max: SpeedLimit(70), a_diff: 10, o_thred: 0.10 }
    }
}

/// Adjusts the raw action `a` to the measured speed at the agent.
///
/// A minimum posting is raised to what traffic is actually doing (bounded
/// by the step-down rule), and a maximum posting is lowered when occupancy
/// says traffic is dense. Everything else passes through.
pub fn speed_match(a: SpeedLimit, a_down: SpeedLimit, speed_mph: f64, occupancy: f64, b: &MatchBounds) -> SpeedLimit {
    let f = round_up_ten(speed_mph);
    let clip = |x: u16| SpeedLimit(x.clamp(b.min.0, b.max.0));
    if a == b.min {
        clip(f.min(a_down.0 + b.a_diff))
    } else if a == b.max && occupancy >= b.o_thred {
        clip(f)
    } else {
        a
    }
}

/// Clamps each limit to the effective maximum of its gantry.
pub fn max_limit_correct(limits: &[SpeedLimit], max: &[SpeedLimit]) -> Vec<SpeedLimit> {
    limits.iter().zip(max).map(|(&v, &m)| v.min(m)).collect()
}

/// Re-applies the step-down rule from downstream (index 0) to upstream.
pub fn enforce_step_down(limits: &mut [SpeedLimit], a_diff: u16) {
    for i in 1..limits.len() {
        let bound = SpeedLimit(limits[i - 1].0 + a_diff);
        if limits[i] > bound {
            limits[i] = bound;
        }
    }
}

/// True when `(l, r)` brackets a run whose every value exceeds both ends.
fn is_bounce(p: &[SpeedLimit], l: usize, r: usize) -> bool {
    let ends = p[l].max(p[r]);
    p[l + 1..r].iter().all(|&v| v > ends)
}

/// Whether position `i` is an order-1 bounce not contained in any longer one.
fn isolated_peak(p: &[SpeedLimit], i: usize) -> bool {
    if !(p[i] > p[i - 1] && p[i] > p[i + 1]) {
        return false;
    }
    !(0..i).any(|l| (i + 1..p.len()).any(|r| r - l >= 3 && is_bounce(p, l, r)))
}

/// Removes isolated one-gantry peaks along the corridor.
///
/// An isolated peak is a gantry posting more than both neighbours whose
/// raised run is exactly that gantry; wider raised runs are left alone.
/// Each peak is lowered to the larger neighbour, lowest index first, until
/// none remain.
pub fn debounce(profile: &[SpeedLimit]) -> Vec<SpeedLimit> {
    let mut p = profile.to_vec();
    if p.len() < 3 {
        return p;
    }
    'outer: loop {
        for i in 1..p.len() - 1 {
            if isolated_peak(&p, i) {
                p[i] = p[i - 1].max(p[i + 1]);
                continue 'outer;
            }
        }
        return p;
    }
}

//! Rule-based benchmark: post the measured speed rounded up, once the
//! change has persisted.

use super::pipeline::{Attribution, Controller, Decision};
use super::rules::{enforce_step_down, max_limit_correct, round_up_ten};
use super::window::SensorWindow;
use super::GuardConfig;
use crate::corridor::{CorridorConfig, SpeedLimit};

#[derive(Debug, Clone)]
pub struct RuleBasedController {
    /// Ticks a new target must persist before it is posted.
    pub confirm_ticks: u32,
    posted: Vec<SpeedLimit>,
    candidate: Vec<(SpeedLimit, u32)>,
}

impl RuleBasedController {
    pub fn new(confirm_ticks: u32) -> Self {
        RuleBasedController { confirm_ticks: confirm_ticks.max(1), posted: Vec::new(), candidate: Vec::new() }
    }
}

impl Default for RuleBasedController {
    fn default() -> Self {
        Self::new(2)
    }
}

impl Controller for RuleBasedController {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn decide(
        &mut self,
        corridor: &CorridorConfig,
        windows: &[SensorWindow],
        max_limits: &[SpeedLimit],
        _guard: &GuardConfig,
        tick: u64,
        t_s: f64,
    ) -> Vec<Decision> {
        let (lo, hi) = (corridor.min_limit.0, corridor.max_limit_default.0);
        if self.posted.len() != windows.len() {
            self.posted = vec![corridor.max_limit_default; windows.len()];
            self.candidate = vec![(corridor.max_limit_default, 0); windows.len()];
        }
        let raw: Vec<SpeedLimit> =
            windows.iter().map(|w| SpeedLimit(round_up_ten(w.speed_mph).clamp(lo, hi))).collect();
        for (i, &target) in raw.iter().enumerate() {
            let (cand, count) = &mut self.candidate[i];
            if target == self.posted[i] {
                *count = 0;
                continue;
            }
            if target == *cand {
                *count += 1;
            } else {
                *cand = target;
                *count = 1;
            }
            if *count >= self.confirm_ticks {
                self.posted[i] = target;
                *count = 0;
            }
        }
        let mut stepped = self.posted.clone();
        enforce_step_down(&mut stepped, corridor.a_diff);
        let corrected = max_limit_correct(&stepped, max_limits);
        windows
            .iter()
            .enumerate()
            .map(|(i, w)| Decision {
                gantry_id: corridor.gantries[i].id.clone(),
                tick,
                t_s,
                lane: None,
                raw_policy_action: raw[i],
                after_sm: stepped[i],
                after_mslc: corrected[i],
                final_limit: corrected[i],
                attribution: Attribution::of(raw[i], stepped[i], corrected[i], corrected[i]),
                obs_used: [w.speed_mph, w.occupancy, 0.0, 0.0, 0.0],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::training_corridor;

    fn windows(v: &[f64]) -> Vec<SensorWindow> {
        v.iter()
            .map(|&s| SensorWindow {
                sensor_id: "s".into(),
                t_end_s: 0.0,
                speed_mph: s,
                occupancy: 0.1,
                staleness_s: 0.0,
                interpolated: false,
            })
            .collect()
    }

    #[test]
    fn drop_waits_for_confirmation() {
        let corridor = training_corridor();
        let max = corridor.max_limits();
        let mut c = RuleBasedController::new(2);
        let mut speeds = vec![68.0; 8];
        speeds[0] = 22.0;
        let g = GuardConfig::default();
        let first = c.decide(&corridor, &windows(&speeds), &max, &g, 0, 30.0);
        assert_eq!(first[0].final_limit, SpeedLimit(70));
        let second = c.decide(&corridor, &windows(&speeds), &max, &g, 1, 60.0);
        assert_eq!(second[0].final_limit, SpeedLimit(30));
        assert_eq!(second[1].final_limit, SpeedLimit(40));
    }

    #[test]
    fn immediate_with_single_tick_confirmation() {
        let corridor = training_corridor();
        let mut c = RuleBasedController::new(1);
        let out = c.decide(&corridor, &windows(&[35.0; 8]), &corridor.max_limits(), &GuardConfig::default(), 0, 30.0);
        assert!(out.iter().all(|d| d.final_limit == SpeedLimit(40)));
    }
}

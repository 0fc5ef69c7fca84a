//! Per-tick decision assembly for the MARL controller.

use serde::{Deserialize, Serialize};

use super::rules::{debounce, enforce_step_down, max_limit_correct, speed_match, MatchBounds};
use super::window::{Preprocessed, Preprocessor, SensorWindow};
use super::GuardConfig;
use crate::corridor::{CorridorConfig, SpeedLimit};
use crate::error::{ConfigError, PolicyError};
use crate::policy::{sequential_sweep, PolicyParameters, Selection, TrafficState};
use crate::scalar::Scalar;
use crate::sim::SensorReading;

/// Last pipeline stage that changed a gantry's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Attribution {
    Policy,
    Sm,
    Mslc,
    Db,
}

impl Attribution {
    pub fn of(raw: SpeedLimit, after_sm: SpeedLimit, after_mslc: SpeedLimit, final_limit: SpeedLimit) -> Self {
        if final_limit != after_mslc {
            Attribution::Db
        } else if after_mslc != after_sm {
            Attribution::Mslc
        } else if after_sm != raw {
            Attribution::Sm
        } else {
            Attribution::Policy
        }
    }
}

/// Everything posted for one gantry at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub gantry_id: String,
    pub tick: u64,
    pub t_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<u32>,
    pub raw_policy_action: SpeedLimit,
    pub after_sm: SpeedLimit,
    pub after_mslc: SpeedLimit,
    #[serde(rename = "final")]
    pub final_limit: SpeedLimit,
    pub attribution: Attribution,
    /// `[v, o, v_up, o_up, a_down]` before normalisation.
    pub obs_used: [f64; 5],
}

fn bounds(corridor: &CorridorConfig, guard: &GuardConfig) -> MatchBounds {
    MatchBounds {
        min: corridor.min_limit,
        max: corridor.max_limit_default,
        a_diff: corridor.a_diff,
        o_thred: guard.o_thred,
    }
}

/// Steps 2-4 of the cycle: sweep with speed matching, correction, debounce.
/// `windows[i]` is the critical-sensor window of gantry `i`.
#[allow(clippy::too_many_arguments)]
pub fn decide<T: Scalar>(
    policy: &PolicyParameters<T>,
    corridor: &CorridorConfig,
    windows: &[SensorWindow],
    max_limits: &[SpeedLimit],
    guard: &GuardConfig,
    tick: u64,
    t_s: f64,
    lane: Option<u32>,
) -> Result<Vec<Decision>, PolicyError> {
    let b = bounds(corridor, guard);
    let states: Vec<TrafficState> = windows.iter().map(SensorWindow::state).collect();
    let steps = sequential_sweep(policy, &states, &mut Selection::Argmax, |_, a, a_down, own| {
        if guard.speed_matching {
            speed_match(a, a_down, own.speed, own.occupancy, &b)
        } else {
            a
        }
    })?;
    let after_sm: Vec<SpeedLimit> = steps.iter().map(|s| s.intended).collect();
    let mut after_mslc = max_limit_correct(&after_sm, max_limits);
    if guard.strict_step_down {
        enforce_step_down(&mut after_mslc, corridor.a_diff);
    }
    let finals = if guard.debounce { debounce(&after_mslc) } else { after_mslc.clone() };
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, s)| Decision {
            gantry_id: corridor.gantries[i].id.clone(),
            tick,
            t_s,
            lane,
            raw_policy_action: s.action,
            after_sm: after_sm[i],
            after_mslc: after_mslc[i],
            final_limit: finals[i],
            attribution: Attribution::of(s.action, after_sm[i], after_mslc[i], finals[i]),
            obs_used: [s.obs.raw.v, s.obs.raw.o, s.obs.raw.v_up, s.obs.raw.o_up, s.obs.raw.a_down],
        })
        .collect())
}

/// Posts every gantry at its effective maximum.
pub fn degraded_decisions(corridor: &CorridorConfig, max_limits: &[SpeedLimit], tick: u64, t_s: f64) -> Vec<Decision> {
    let top = corridor.max_limit_default;
    corridor
        .gantries
        .iter()
        .zip(max_limits)
        .map(|(g, &m)| Decision {
            gantry_id: g.id.clone(),
            tick,
            t_s,
            lane: None,
            raw_policy_action: top,
            after_sm: top,
            after_mslc: m,
            final_limit: m,
            attribution: Attribution::Mslc,
            obs_used: [0.0, 0.0, 0.0, 0.0, f64::from(top.0)],
        })
        .collect()
}

/// Degraded posting under `guard`: the effective maxima, debounced when the
/// debounce stage is on so operator maxima cannot leave a one-gantry peak.
pub fn fallback_decisions(
    corridor: &CorridorConfig,
    max_limits: &[SpeedLimit],
    guard: &GuardConfig,
    tick: u64,
    t_s: f64,
) -> Vec<Decision> {
    let mut out = degraded_decisions(corridor, max_limits, tick, t_s);
    if guard.debounce {
        let finals = debounce(max_limits);
        for (d, f) in out.iter_mut().zip(finals) {
            if f != d.final_limit {
                d.final_limit = f;
                d.attribution = Attribution::Db;
            }
        }
    }
    out
}

/// Anything that maps gantry windows to posted limits.
pub trait Controller: Send {
    fn name(&self) -> &str;

    fn decide(
        &mut self,
        corridor: &CorridorConfig,
        windows: &[SensorWindow],
        max_limits: &[SpeedLimit],
        guard: &GuardConfig,
        tick: u64,
        t_s: f64,
    ) -> Vec<Decision>;
}

/// The trained policy wrapped in the safety rules.
#[derive(Debug, Clone)]
pub struct MarlController<T> {
    pub policy: PolicyParameters<T>,
}

impl<T: Scalar> Controller for MarlController<T> {
    fn name(&self) -> &str {
        "marl"
    }

    fn decide(
        &mut self,
        corridor: &CorridorConfig,
        windows: &[SensorWindow],
        max_limits: &[SpeedLimit],
        guard: &GuardConfig,
        tick: u64,
        t_s: f64,
    ) -> Vec<Decision> {
        // masking always leaves the minimum valid, so the sweep cannot fail
        decide(&self.policy, corridor, windows, max_limits, guard, tick, t_s, None)
            .unwrap_or_else(|_| fallback_decisions(corridor, max_limits, guard, tick, t_s))
    }
}

/// Posts every gantry at its maximum regardless of traffic.
#[derive(Debug, Clone, Default)]
pub struct FixedMaxController;

impl Controller for FixedMaxController {
    fn name(&self) -> &str {
        "fixed-max"
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
        let mut out = degraded_decisions(corridor, max_limits, tick, t_s);
        for (d, w) in out.iter_mut().zip(windows) {
            d.attribution = Attribution::of(d.raw_policy_action, d.after_sm, d.after_mslc, d.final_limit);
            d.obs_used = [w.speed_mph, w.occupancy, 0.0, 0.0, d.obs_used[4]];
        }
        out
    }
}

/// Output of one guarded tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub decisions: Vec<Decision>,
    pub degraded: bool,
    /// Per-gantry windows the decisions were based on.
    pub windows: Vec<SensorWindow>,
    pub sensors: Preprocessed,
}

/// Stateful wrapper running all four steps of the cycle each tick.
#[derive(Debug, Clone)]
pub struct GuardPipeline {
    pub corridor: CorridorConfig,
    pub config: GuardConfig,
    critical: Vec<usize>,
    pre: Preprocessor,
}

impl GuardPipeline {
    pub fn new(corridor: CorridorConfig, config: GuardConfig) -> Result<Self, ConfigError> {
        let corridor = corridor.validated()?;
        let critical = corridor.critical_sensors()?;
        Ok(GuardPipeline { pre: Preprocessor::new(&corridor), critical, corridor, config })
    }

    pub fn critical_sensors(&self) -> &[usize] {
        &self.critical
    }

    pub fn run_tick(
        &mut self,
        controller: &mut dyn Controller,
        readings: &[SensorReading],
        max_limits: &[SpeedLimit],
        tick: u64,
        t_s: f64,
    ) -> TickOutput {
        self.pre.ingest(readings);
        let sensors = self.pre.windows(t_s, &self.config);
        let windows = sensors.gantry_windows(&self.critical);
        let decisions = if sensors.degraded {
            fallback_decisions(&self.corridor, max_limits, &self.config, tick, t_s)
        } else {
            controller.decide(&self.corridor, &windows, max_limits, &self.config, tick, t_s)
        };
        TickOutput { decisions, degraded: sensors.degraded, windows, sensors }
    }
}

//! Recorded episodes, controller replays and the five-experiment matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::events::{
    detect_events, response_delay, CongestionEvent, DelayStats, DetectedBy, EventConfig, ResponseDelay,
};
use super::field::{coarse_field, ground_truth_field, SpeedField, FIELD_DT_S};
use super::warnings::{warning_audit, WarningConfig, WarningCounts, WarningLedger};
use crate::corridor::CorridorConfig;
use crate::error::EvalError;
use crate::guard::{
    fallback_decisions, Controller, Decision, GuardConfig, MarlController, Preprocessor, RuleBasedController, WINDOW_S,
};
use crate::policy::PolicyParameters;
use crate::scalar::Scalar;
use crate::sim::{incident_suite, SensorReading, SimConfig, SimLog, Simulator, SENSOR_PERIOD_S};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTick {
    pub tick: u64,
    pub t_s: f64,
    pub readings: Vec<SensorReading>,
}

/// A simulated run with every gantry at its configured maximum, kept for
/// open-loop evaluation of controllers.
#[derive(Debug, Clone)]
pub struct RecordedEpisode {
    pub corridor: CorridorConfig,
    pub sim: SimConfig,
    pub log: SimLog,
    pub ticks: Vec<RecordedTick>,
}

impl RecordedEpisode {
    pub fn readings(&self) -> Vec<SensorReading> {
        self.ticks.iter().flat_map(|t| t.readings.iter().cloned()).collect()
    }

    pub fn fine_field(&self) -> Result<SpeedField<f64>, EvalError> {
        ground_truth_field(&self.log, self.corridor.direction)
    }

    /// Sensor-derived field on the same grid as `fine`.
    pub fn coarse_field(&self, fine: &SpeedField<f64>) -> Result<SpeedField<f64>, EvalError> {
        coarse_field(&self.readings(), &self.corridor, fine)
    }
}

pub fn record_episode(corridor: &CorridorConfig, sim: &SimConfig) -> Result<RecordedEpisode, EvalError> {
    let mut sim_cfg = sim.clone();
    sim_cfg.record_interval_s = FIELD_DT_S;
    let mut s = Simulator::new(corridor, sim_cfg.clone())?;
    let limits = corridor.max_limits();
    let n = (sim.duration_s / SENSOR_PERIOD_S).round() as u64;
    let mut ticks = Vec::with_capacity(n as usize);
    for k in 0..n {
        s.advance(&limits, SENSOR_PERIOD_S)?;
        let t = s.time();
        ticks.push(RecordedTick { tick: k, t_s: t, readings: s.emit_sensor_readings(t)? });
    }
    Ok(RecordedEpisode { corridor: corridor.clone(), sim: sim_cfg, log: s.into_log(), ticks })
}

/// What the controller reads at each gantry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    /// 90-s windows of the roadside sensor readings, lane-averaged.
    Sensors,
    /// Sensor windows with speed replaced by the 90-s mean of the
    /// lane-averaged ground-truth field at the sensor.
    FineLaneAverage,
    /// As above for a single lane; decisions are tagged with the lane.
    FineLane(usize),
}

fn field_window_mean(field: &SpeedField<f64>, lane: Option<usize>, t_end: f64, x: f64) -> Option<f64> {
    let steps = (WINDOW_S / field.dt_s).round() as usize;
    let lanes: Vec<usize> = match lane {
        Some(l) => vec![l],
        None => (0..field.lanes).collect(),
    };
    let x = x.clamp(field.x0_mi, field.x_end());
    let vals: Vec<f64> = (0..steps)
        .map(|j| t_end - j as f64 * field.dt_s)
        .filter(|&t| t >= field.t0_s)
        .flat_map(|t| lanes.iter().filter_map(move |&l| field.sample(t, x, l)))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Replays `episode` through `controller` open-loop.
pub fn run_controller(
    episode: &RecordedEpisode,
    controller: &mut dyn Controller,
    guard: &GuardConfig,
    input: InputSource,
    fine: Option<&SpeedField<f64>>,
) -> Result<Vec<Decision>, EvalError> {
    let corridor = &episode.corridor;
    let critical = corridor.critical_sensors()?;
    let positions = corridor.sensor_positions();
    let mut pre = match input {
        InputSource::FineLane(l) => Preprocessor::new(corridor).for_lane(l),
        _ => Preprocessor::new(corridor),
    };
    let max = corridor.max_limits();
    let mut out = Vec::with_capacity(episode.ticks.len() * corridor.n_gantries());
    for tick in &episode.ticks {
        pre.ingest(&tick.readings);
        let sensors = pre.windows(tick.t_s, guard);
        let mut windows = sensors.gantry_windows(&critical);
        let lane = match input {
            InputSource::Sensors => None,
            InputSource::FineLaneAverage => None,
            InputSource::FineLane(l) => Some(l),
        };
        if input != InputSource::Sensors {
            let field = fine.ok_or_else(|| EvalError::Field("fine input needs a ground-truth field".into()))?;
            for (w, &s) in windows.iter_mut().zip(&critical) {
                if let Some(v) = field_window_mean(field, lane, tick.t_s, positions[s]) {
                    w.speed_mph = v;
                }
            }
        }
        let mut decisions = if sensors.degraded {
            fallback_decisions(corridor, &max, guard, tick.tick, tick.t_s)
        } else {
            controller.decide(corridor, &windows, &max, guard, tick.tick, tick.t_s)
        };
        if let Some(l) = lane {
            decisions.iter_mut().for_each(|d| d.lane = Some(l as u32));
        }
        out.extend(decisions);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub guard: GuardConfig,
    pub warning: WarningConfig,
    pub benchmark_confirm_ticks: u32,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig { guard: GuardConfig::default(), warning: WarningConfig::default(), benchmark_confirm_ticks: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub id: u8,
    pub name: String,
    pub per_episode: Vec<WarningCounts>,
    pub pooled: WarningCounts,
    pub per_lane: Vec<WarningCounts>,
}

pub const EXPERIMENT_NAMES: [&str; 5] = [
    "coarse input, coarse evaluation",
    "coarse input, fine evaluation",
    "rule-based benchmark, fine evaluation",
    "fine lane-average input, fine evaluation",
    "fine lane-specific input, fine evaluation",
];

fn episode_ledgers<T: Scalar>(
    ep: &RecordedEpisode,
    policy: &PolicyParameters<T>,
    cfg: &MatrixConfig,
) -> Result<[WarningLedger; 5], EvalError> {
    let fine = ep.fine_field()?;
    let coarse = ep.coarse_field(&fine)?;
    let marl = || MarlController { policy: policy.clone() };
    let coarse_in = run_controller(ep, &mut marl(), &cfg.guard, InputSource::Sensors, None)?;
    let bench = run_controller(
        ep,
        &mut RuleBasedController::new(cfg.benchmark_confirm_ticks),
        &cfg.guard,
        InputSource::Sensors,
        None,
    )?;
    let fine_avg = run_controller(ep, &mut marl(), &cfg.guard, InputSource::FineLaneAverage, Some(&fine))?;
    let mut per_lane = Vec::new();
    for l in 0..fine.lanes {
        per_lane.extend(run_controller(ep, &mut marl(), &cfg.guard, InputSource::FineLane(l), Some(&fine))?);
    }
    let c = &ep.corridor;
    let w = &cfg.warning;
    Ok([
        warning_audit(&coarse, &coarse_in, c, w)?,
        warning_audit(&fine, &coarse_in, c, w)?,
        warning_audit(&fine, &bench, c, w)?,
        warning_audit(&fine, &fine_avg, c, w)?,
        warning_audit(&fine, &per_lane, c, w)?,
    ])
}

/// Runs all five experiments on the same episodes.
pub fn run_experiment_matrix<T: Scalar>(
    episodes: &[RecordedEpisode],
    policy: &PolicyParameters<T>,
    cfg: &MatrixConfig,
) -> Result<Vec<ExperimentResult>, EvalError> {
    let ledgers: Vec<[WarningLedger; 5]> =
        episodes.par_iter().map(|ep| episode_ledgers(ep, policy, cfg)).collect::<Result<_, _>>()?;
    Ok((0..5)
        .map(|e| {
            let per_episode: Vec<WarningCounts> = ledgers.iter().map(|l| l[e].overall).collect();
            let mut pooled = WarningCounts::default();
            per_episode.iter().for_each(|c| pooled.add(c));
            let lanes = ledgers.first().map_or(0, |l| l[e].per_lane.len());
            let per_lane = (0..lanes)
                .map(|ln| {
                    let mut c = WarningCounts::default();
                    ledgers.iter().for_each(|l| c.add(&l[e].per_lane[ln]));
                    c
                })
                .collect();
            ExperimentResult { id: e as u8 + 1, name: EXPERIMENT_NAMES[e].into(), per_episode, pooled, per_lane }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseSuiteConfig {
    pub count: usize,
    pub seed: u64,
    pub radius_mi: f64,
    pub events: EventConfig,
    pub guard: GuardConfig,
    pub benchmark_confirm_ticks: u32,
}

impl Default for ResponseSuiteConfig {
    fn default() -> Self {
        ResponseSuiteConfig {
            count: 20,
            seed: 0,
            radius_mi: 1.0,
            events: EventConfig::default(),
            guard: GuardConfig::default(),
            benchmark_confirm_ticks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSuiteResult {
    pub events: Vec<CongestionEvent>,
    pub marl: Vec<ResponseDelay>,
    pub benchmark: Vec<ResponseDelay>,
    pub marl_stats: DelayStats,
    pub benchmark_stats: DelayStats,
    /// Incident episodes in which no event was labeled.
    pub unlabeled_episodes: usize,
}

/// Injected-incident suite: events are labeled on the sensor-derived field
/// and each controller's first reaction nearby is timed.
pub fn run_response_suite<T: Scalar>(
    policy: &PolicyParameters<T>,
    cfg: &ResponseSuiteConfig,
) -> Result<ResponseSuiteResult, EvalError> {
    let scenarios = incident_suite(cfg.count, cfg.seed);
    type PerEpisode = (Vec<CongestionEvent>, Vec<ResponseDelay>, Vec<ResponseDelay>);
    let per: Vec<PerEpisode> = scenarios
        .par_iter()
        .map(|(corridor, sim)| -> Result<PerEpisode, EvalError> {
            let ep = record_episode(corridor, sim)?;
            let fine = ep.fine_field()?;
            let labeled = ep.coarse_field(&fine.lane_average())?;
            let events = detect_events(&labeled, &cfg.events, DetectedBy::Labeled);
            let marl = run_controller(
                &ep,
                &mut MarlController { policy: policy.clone() },
                &cfg.guard,
                InputSource::Sensors,
                None,
            )?;
            let bench = run_controller(
                &ep,
                &mut RuleBasedController::new(cfg.benchmark_confirm_ticks),
                &cfg.guard,
                InputSource::Sensors,
                None,
            )?;
            let horizon = sim.duration_s;
            Ok((
                events.clone(),
                response_delay(&events, &marl, corridor, cfg.radius_mi, horizon),
                response_delay(&events, &bench, corridor, cfg.radius_mi, horizon),
            ))
        })
        .collect::<Result<_, _>>()?;
    let unlabeled_episodes = per.iter().filter(|p| p.0.is_empty()).count();
    let mut events = Vec::new();
    let mut marl = Vec::new();
    let mut benchmark = Vec::new();
    for (e, m, b) in per {
        let base = events.len();
        events.extend(e.into_iter().map(|mut x| {
            x.id += base;
            x
        }));
        marl.extend(m.into_iter().map(|mut x| {
            x.event_id += base;
            x
        }));
        benchmark.extend(b.into_iter().map(|mut x| {
            x.event_id += base;
            x
        }));
    }
    Ok(ResponseSuiteResult {
        marl_stats: DelayStats::of(&marl),
        benchmark_stats: DelayStats::of(&benchmark),
        events,
        marl,
        benchmark,
        unlabeled_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::{degraded_decisions, FixedMaxController};
    use crate::sim::{build_testing_scenario, TestingOptions};

    fn short_episode() -> RecordedEpisode {
        let (c, s) = build_testing_scenario(TestingOptions { duration_s: 300.0, ..TestingOptions::default() });
        record_episode(&c, &s).unwrap()
    }

    #[test]
    fn recording_has_ticks_and_snapshots() {
        let ep = short_episode();
        assert_eq!(ep.ticks.len(), 10);
        assert_eq!(ep.ticks[0].t_s, 30.0);
        assert_eq!(ep.log.snapshots.len(), 76);
        let fine = ep.fine_field().unwrap();
        assert_eq!((fine.nx, fine.lanes), (850, 4));
        let coarse = ep.coarse_field(&fine).unwrap();
        assert_eq!(coarse.values.len(), fine.values.len());
    }

    #[test]
    fn lane_input_tags_decisions() {
        let ep = short_episode();
        let fine = ep.fine_field().unwrap();
        let d = run_controller(
            &ep,
            &mut FixedMaxController,
            &GuardConfig::default(),
            InputSource::FineLane(2),
            Some(&fine),
        )
        .unwrap();
        assert_eq!(d.len(), 10 * 34);
        assert!(d.iter().all(|x| x.lane == Some(2)));
    }

    #[test]
    fn reactive_controller_delay_within_window_lag() {
        // a controller reacting to any window under 50 mph
        struct Reactive;
        impl Controller for Reactive {
            fn name(&self) -> &str {
                "reactive"
            }
            fn decide(
                &mut self,
                c: &CorridorConfig,
                w: &[crate::guard::SensorWindow],
                max: &[crate::corridor::SpeedLimit],
                _g: &GuardConfig,
                tick: u64,
                t: f64,
            ) -> Vec<Decision> {
                let mut d = degraded_decisions(c, max, tick, t);
                for (x, win) in d.iter_mut().zip(w) {
                    if win.speed_mph < 50.0 {
                        x.final_limit = crate::corridor::SpeedLimit(30);
                    }
                }
                d
            }
        }
        let (c, s) = incident_suite(1, 3).remove(0);
        let ep = record_episode(&c, &s).unwrap();
        let fine = ep.fine_field().unwrap();
        let labeled = ep.coarse_field(&fine.lane_average()).unwrap();
        let events = detect_events(&labeled, &EventConfig::default(), DetectedBy::Labeled);
        assert_eq!(events.len(), 1, "{events:?}");
        let d = run_controller(&ep, &mut Reactive, &GuardConfig::default(), InputSource::Sensors, None).unwrap();
        let r = response_delay(&events, &d, &c, 1.0, s.duration_s);
        assert!(!r[0].censored);
        assert!(r[0].delay_s <= SENSOR_PERIOD_S + WINDOW_S, "{r:?}");
    }
}

//! Successful and false warning rates from virtual trajectories.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::SpeedField;
use super::trajectory::{virtual_trajectory, VirtualTrajectory};
use crate::corridor::{CorridorConfig, SpeedLimit};
use crate::error::EvalError;
use crate::guard::Decision;
use crate::scalar::Scalar;

/// What a gantry shows a given lane at a given time.
pub trait DisplaySchedule: Sync {
    fn displayed(&self, gantry: usize, lane: usize, t_s: f64) -> SpeedLimit;
}

/// Posted limits reconstructed from a decision log. A decision at `t_s`
/// holds until the next one for the same gantry and lane (closed on the
/// left); before the first decision the gantry shows `default`.
#[derive(Debug, Clone)]
pub struct DecisionSchedule {
    /// Per gantry: (lane or None, sorted (t_s, final)).
    series: Vec<HashMap<Option<u32>, Vec<(f64, SpeedLimit)>>>,
    default: SpeedLimit,
    pub t_first: f64,
    pub t_last: f64,
}

impl DecisionSchedule {
    pub fn new(corridor: &CorridorConfig, decisions: &[Decision]) -> Self {
        let index: HashMap<&str, usize> =
            corridor.gantries.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
        let mut series = vec![HashMap::<Option<u32>, Vec<(f64, SpeedLimit)>>::new(); corridor.gantries.len()];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for d in decisions {
            if let Some(&g) = index.get(d.gantry_id.as_str()) {
                series[g].entry(d.lane).or_default().push((d.t_s, d.final_limit));
                lo = lo.min(d.t_s);
                hi = hi.max(d.t_s);
            }
        }
        for m in &mut series {
            for v in m.values_mut() {
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
        DecisionSchedule { series, default: corridor.max_limit_default, t_first: lo, t_last: hi }
    }
}

impl DisplaySchedule for DecisionSchedule {
    fn displayed(&self, gantry: usize, lane: usize, t_s: f64) -> SpeedLimit {
        let m = &self.series[gantry];
        let s = m.get(&Some(lane as u32)).or_else(|| m.get(&None));
        let Some(s) = s else { return self.default };
        let n = s.partition_point(|(t, _)| *t <= t_s);
        if n == 0 {
            self.default
        } else {
            s[n - 1].1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarningCounting {
    /// One warning per vehicle passing a minimum-limit display.
    #[default]
    PerPassage,
    /// One warning per gantry, lane and tick showing the minimum; false
    /// when no vehicle passing during it meets the deviation test.
    PerDisplayTick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarningConfig {
    pub min_limit: f64,
    pub max_deviation: f64,
    /// Interval between virtual departures per lane.
    pub departure_interval_s: f64,
    pub counting: WarningCounting,
    /// Tick length used to group passages under `PerDisplayTick`.
    pub tick_s: f64,
    pub keep_records: bool,
}

impl Default for WarningConfig {
    fn default() -> Self {
        WarningConfig {
            min_limit: 30.0,
            max_deviation: 10.0,
            departure_interval_s: 15.0,
            counting: WarningCounting::PerPassage,
            tick_s: 30.0,
            keep_records: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WarningCounts {
    pub situations: u64,
    pub successful: u64,
    pub warnings: u64,
    pub false_warnings: u64,
}

impl WarningCounts {
    pub fn add(&mut self, o: &WarningCounts) {
        self.situations += o.situations;
        self.successful += o.successful;
        self.warnings += o.warnings;
        self.false_warnings += o.false_warnings;
    }

    pub fn missed(&self) -> u64 {
        self.situations - self.successful
    }

    /// Successful warning rate; `None` without situations.
    pub fn swr(&self) -> Option<f64> {
        (self.situations > 0).then(|| self.successful as f64 / self.situations as f64)
    }

    /// False warning rate; `None` without warnings.
    pub fn fwr(&self) -> Option<f64> {
        (self.warnings > 0).then(|| self.false_warnings as f64 / self.warnings as f64)
    }
}

/// One vehicle passing one gantry pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub trajectory: usize,
    pub lane: usize,
    pub upstream_gantry: usize,
    pub downstream_gantry: usize,
    pub passage_t_s: f64,
    pub displayed: SpeedLimit,
    pub segment_min_mph: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WarningLedger {
    pub overall: WarningCounts,
    pub per_lane: Vec<WarningCounts>,
    pub records: Vec<PassageRecord>,
}

/// Trajectories departing every `interval` seconds in every lane from the
/// upstream edge of the field.
pub fn seed_trajectories<T: Scalar>(field: &SpeedField<T>, interval: f64) -> Vec<VirtualTrajectory> {
    let n = ((field.t_end() - field.t0_s) / interval).floor() as usize + 1;
    let starts: Vec<(f64, usize)> =
        (0..n).flat_map(|k| (0..field.lanes).map(move |l| (field.t0_s + k as f64 * interval, l))).collect();
    starts
        .par_iter()
        .map(|&(t, l)| virtual_trajectory(field, t, l, field.x0_mi).expect("departure inside field"))
        .collect()
}

/// Every passage of every trajectory over every consecutive gantry pair
/// it fully traverses.
pub fn passages(
    trajectories: &[VirtualTrajectory],
    gantry_positions: &[f64],
    schedule: &dyn DisplaySchedule,
) -> Vec<PassageRecord> {
    // travel order: upstream first
    let mut order: Vec<usize> = (0..gantry_positions.len()).collect();
    order.sort_by(|&a, &b| gantry_positions[a].total_cmp(&gantry_positions[b]));
    trajectories
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ti, tr)| {
            let order = &order;
            order.windows(2).filter_map(move |w| {
                let (up, down) = (w[0], w[1]);
                let (xu, xd) = (gantry_positions[up], gantry_positions[down]);
                if tr.end_x() < xd {
                    return None;
                }
                let t_pass = tr.crossing_time(xu)?;
                let seg_min = tr.min_speed_between(xu, xd)?;
                Some(PassageRecord {
                    trajectory: ti,
                    lane: tr.lane,
                    upstream_gantry: up,
                    downstream_gantry: down,
                    passage_t_s: t_pass,
                    displayed: schedule.displayed(up, tr.lane, t_pass),
                    segment_min_mph: seg_min,
                })
            })
        })
        .collect()
}

/// Tallies passages into a ledger.
pub fn tally(records: Vec<PassageRecord>, lanes: usize, cfg: &WarningConfig) -> WarningLedger {
    let mut per_lane = vec![WarningCounts::default(); lanes];
    let min = SpeedLimit(cfg.min_limit.round() as u16);
    let false_above = cfg.min_limit + cfg.max_deviation;
    let mut display_ticks: HashMap<(usize, usize, i64), bool> = HashMap::new();
    for r in &records {
        let c = &mut per_lane[r.lane];
        let situation = r.segment_min_mph < cfg.min_limit;
        let warned = r.displayed == min;
        c.situations += u64::from(situation);
        c.successful += u64::from(situation && warned);
        if warned {
            match cfg.counting {
                WarningCounting::PerPassage => {
                    c.warnings += 1;
                    c.false_warnings += u64::from(r.segment_min_mph > false_above);
                }
                WarningCounting::PerDisplayTick => {
                    let key = (r.upstream_gantry, r.lane, (r.passage_t_s / cfg.tick_s).floor() as i64);
                    let justified = display_ticks.entry(key).or_insert(false);
                    *justified |= r.segment_min_mph <= false_above;
                }
            }
        }
    }
    for ((_, lane, _), justified) in display_ticks {
        per_lane[lane].warnings += 1;
        per_lane[lane].false_warnings += u64::from(!justified);
    }
    let mut overall = WarningCounts::default();
    per_lane.iter().for_each(|c| overall.add(c));
    WarningLedger { overall, per_lane, records: if cfg.keep_records { records } else { Vec::new() } }
}

/// Audits a schedule of displays against trajectories through `field`.
pub fn audit_schedule<T: Scalar>(
    field: &SpeedField<T>,
    corridor: &CorridorConfig,
    schedule: &dyn DisplaySchedule,
    cfg: &WarningConfig,
) -> WarningLedger {
    let trajectories = seed_trajectories(field, cfg.departure_interval_s);
    let records = passages(&trajectories, &corridor.gantry_positions(), schedule);
    tally(records, field.lanes, cfg)
}

/// Audits the limits recorded in `decisions`.
pub fn warning_audit<T: Scalar>(
    field: &SpeedField<T>,
    decisions: &[Decision],
    corridor: &CorridorConfig,
    cfg: &WarningConfig,
) -> Result<WarningLedger, EvalError> {
    let schedule = DecisionSchedule::new(corridor, decisions);
    if decisions.is_empty() || schedule.t_first > field.t_end() || schedule.t_last < field.t0_s {
        return Err(EvalError::Misaligned {
            log_start: schedule.t_first,
            log_end: schedule.t_last,
            field_start: field.t0_s,
            field_end: field.t_end(),
        });
    }
    Ok(audit_schedule(field, corridor, &schedule, cfg))
}

/// Perfect-foresight displays: each gantry shows the minimum limit to a lane
/// for the one-second slot in which a vehicle that will drop below the
/// minimum on the next segment passes it.
#[derive(Debug, Clone)]
pub struct PerfectForesight {
    slots: std::collections::HashSet<(usize, usize, i64)>,
    min: SpeedLimit,
    max: SpeedLimit,
}

impl PerfectForesight {
    pub fn new<T: Scalar>(field: &SpeedField<T>, corridor: &CorridorConfig, cfg: &WarningConfig) -> Self {
        struct Never(SpeedLimit);
        impl DisplaySchedule for Never {
            fn displayed(&self, _: usize, _: usize, _: f64) -> SpeedLimit {
                self.0
            }
        }
        let trajectories = seed_trajectories(field, cfg.departure_interval_s);
        let all = passages(&trajectories, &corridor.gantry_positions(), &Never(corridor.max_limit_default));
        let slots = all
            .iter()
            .filter(|r| r.segment_min_mph < cfg.min_limit)
            .map(|r| (r.upstream_gantry, r.lane, r.passage_t_s.floor() as i64))
            .collect();
        PerfectForesight { slots, min: corridor.min_limit, max: corridor.max_limit_default }
    }
}

impl DisplaySchedule for PerfectForesight {
    fn displayed(&self, gantry: usize, lane: usize, t_s: f64) -> SpeedLimit {
        if self.slots.contains(&(gantry, lane, t_s.floor() as i64)) {
            self.min
        } else {
            self.max
        }
    }
}

//! Step 1 of the control cycle: turn the raw 30-s sensor stream into one
//! 90-s window per sensor, filling gaps.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corridor::CorridorConfig;
use crate::policy::TrafficState;
use crate::sim::{volume_weighted, SensorReading};

use super::GuardConfig;

/// Length of the aggregation window.
pub const WINDOW_S: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub sensor_id: String,
    pub t_end_s: f64,
    /// Volume-weighted mean over lanes and intervals.
    pub speed_mph: f64,
    pub occupancy: f64,
    pub staleness_s: f64,
    pub interpolated: bool,
}

impl SensorWindow {
    pub fn state(&self) -> TrafficState {
        TrafficState { speed: self.speed_mph, occupancy: self.occupancy }
    }
}

/// Windows for every sensor at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub sensors: Vec<SensorWindow>,
    /// Every sensor fell back to the free-flow default.
    pub degraded: bool,
}

impl Preprocessed {
    /// The window each gantry reads, given its critical sensor indices.
    pub fn gantry_windows(&self, critical: &[usize]) -> Vec<SensorWindow> {
        critical.iter().map(|&s| self.sensors[s].clone()).collect()
    }
}

/// Rolling per-sensor history; one per corridor direction.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    positions: Vec<f64>,
    history: Vec<VecDeque<SensorReading>>,
    last_fresh: Vec<Option<SensorWindow>>,
    free_flow_mph: f64,
    lane: Option<usize>,
}

impl Preprocessor {
    pub fn new(corridor: &CorridorConfig) -> Self {
        let ids: Vec<String> = corridor.sensors.iter().map(|s| s.id.clone()).collect();
        Preprocessor {
            index: ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect(),
            positions: corridor.sensor_positions(),
            history: vec![VecDeque::new(); ids.len()],
            last_fresh: vec![None; ids.len()],
            ids,
            free_flow_mph: corridor.max_limit_default.as_f64(),
            lane: None,
        }
    }

    /// Restricts aggregation to one lane (lane-specific control).
    pub fn for_lane(mut self, lane: usize) -> Self {
        self.lane = Some(lane);
        self
    }

    /// Buffers readings; unknown sensor ids are ignored.
    pub fn ingest(&mut self, readings: &[SensorReading]) {
        for r in readings {
            if let Some(&i) = self.index.get(&r.sensor_id) {
                let h = &mut self.history[i];
                h.push_back(r.clone());
                while h.len() > 8 {
                    h.pop_front();
                }
            }
        }
    }

    fn fresh_window(&self, i: usize, t_end: f64) -> Option<SensorWindow> {
        let recent: Vec<&SensorReading> = self.history[i]
            .iter()
            .filter(|r| r.timestamp_s > t_end - WINDOW_S + 1e-6 && r.timestamp_s <= t_end + 1e-6)
            .collect();
        if recent.is_empty() {
            return None;
        }
        let lanes = |r: &SensorReading| -> Vec<usize> {
            match self.lane {
                Some(l) if l < r.speed.len() => vec![l],
                _ => (0..r.speed.len()).collect(),
            }
        };
        let pairs: Vec<(f64, f64)> =
            recent.iter().flat_map(|r| lanes(r).into_iter().map(move |l| (r.speed[l], r.volume[l]))).collect();
        let occ: Vec<f64> = recent.iter().flat_map(|r| lanes(r).into_iter().map(move |l| r.occupancy[l])).collect();
        Some(SensorWindow {
            sensor_id: self.ids[i].clone(),
            t_end_s: t_end,
            speed_mph: volume_weighted(pairs.iter().copied()).max(0.0),
            occupancy: (occ.iter().sum::<f64>() / occ.len() as f64).clamp(0.0, 1.0),
            staleness_s: 0.0,
            interpolated: false,
        })
    }

    /// Builds the window of every sensor ending at `t_end`.
    pub fn windows(&mut self, t_end: f64, cfg: &GuardConfig) -> Preprocessed {
        let n = self.ids.len();
        let fresh: Vec<Option<SensorWindow>> = (0..n).map(|i| self.fresh_window(i, t_end)).collect();
        let mut out = Vec::with_capacity(n);
        let mut defaults = 0;
        for i in 0..n {
            if let Some(w) = &fresh[i] {
                out.push(w.clone());
                continue;
            }
            let up = (0..i).rev().find(|&j| fresh[j].is_some());
            let down = (i + 1..n).find(|&j| fresh[j].is_some());
            let filled = match (up, down) {
                (Some(u), Some(d)) => {
                    let (wu, wd) = (fresh[u].as_ref().expect("fresh"), fresh[d].as_ref().expect("fresh"));
                    let span = self.positions[d] - self.positions[u];
                    let frac = if span > 0.0 { (self.positions[i] - self.positions[u]) / span } else { 0.5 };
                    SensorWindow {
                        sensor_id: self.ids[i].clone(),
                        t_end_s: t_end,
                        speed_mph: wu.speed_mph + frac * (wd.speed_mph - wu.speed_mph),
                        occupancy: wu.occupancy + frac * (wd.occupancy - wu.occupancy),
                        staleness_s: 0.0,
                        interpolated: true,
                    }
                }
                _ => match &self.last_fresh[i] {
                    Some(last) if t_end - last.t_end_s <= cfg.staleness_limit_s => SensorWindow {
                        t_end_s: t_end,
                        staleness_s: t_end - last.t_end_s,
                        interpolated: true,
                        ..last.clone()
                    },
                    _ => {
                        defaults += 1;
                        SensorWindow {
                            sensor_id: self.ids[i].clone(),
                            t_end_s: t_end,
                            speed_mph: self.free_flow_mph,
                            occupancy: 0.0,
                            staleness_s: self.last_fresh[i].as_ref().map_or(t_end, |l| t_end - l.t_end_s),
                            interpolated: true,
                        }
                    }
                },
            };
            out.push(filled);
        }
        for (slot, f) in self.last_fresh.iter_mut().zip(fresh) {
            if f.is_some() {
                *slot = f;
            }
        }
        Preprocessed { sensors: out, degraded: n > 0 && defaults == n }
    }
}

/// Ingests `readings` and returns the windows ending at `t_end`.
pub fn preprocess(pre: &mut Preprocessor, readings: &[SensorReading], t_end: f64, cfg: &GuardConfig) -> Preprocessed {
    pre.ingest(readings);
    pre.windows(t_end, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{Direction, Gantry, Sensor, SpeedLimit};

    fn corridor() -> CorridorConfig {
        CorridorConfig {
            name: "w".into(),
            direction: Direction::WB,
            length_miles: 3.0,
            origin_milepost: 3.0,
            gantries: vec![Gantry { id: "G1".into(), milepost: 1.5, max_limit: SpeedLimit(70) }],
            sensors: ["A", "B", "C"]
                .iter()
                .enumerate()
                .map(|(i, id)| Sensor { id: id.to_string(), milepost: 2.5 - i as f64, lanes: 4 })
                .collect(),
            lanes: 4,
            control_period_s: 30.0,
            min_limit: SpeedLimit(30),
            max_limit_default: SpeedLimit(70),
            action_set: [30, 40, 50, 60, 70].map(SpeedLimit).to_vec(),
            a_diff: 10,
        }
        .validated()
        .unwrap()
    }

    fn reading(id: &str, t: f64, speed: [f64; 4], volume: [f64; 4]) -> SensorReading {
        SensorReading {
            sensor_id: id.into(),
            timestamp_s: t,
            speed: speed.to_vec(),
            volume: volume.to_vec(),
            occupancy: vec![0.2; 4],
        }
    }

    #[test]
    fn ninety_second_volume_weighted_mean() {
        let mut pre = Preprocessor::new(&corridor());
        let cfg = GuardConfig::default();
        for t in [30.0, 60.0, 90.0] {
            let rs: Vec<_> = ["A", "B", "C"]
                .iter()
                .map(|id| reading(id, t, [60.0, 55.0, 50.0, 45.0], [10.0, 20.0, 30.0, 40.0]))
                .collect();
            pre.ingest(&rs);
        }
        let out = pre.windows(90.0, &cfg);
        assert!(!out.degraded);
        for w in &out.sensors {
            assert!((w.speed_mph - 50.0).abs() < 1e-12);
            assert!(!w.interpolated);
            assert!((w.occupancy - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_sensor_interpolated_between_neighbours() {
        let mut pre = Preprocessor::new(&corridor());
        let cfg = GuardConfig::default();
        let rs = vec![reading("A", 30.0, [60.0; 4], [5.0; 4]), reading("C", 30.0, [40.0; 4], [5.0; 4])];
        let out = preprocess(&mut pre, &rs, 30.0, &cfg);
        let b = &out.sensors[1];
        assert_eq!(b.sensor_id, "B");
        assert!((b.speed_mph - 50.0).abs() < 1e-12);
        assert!(b.interpolated);
        assert!(!out.sensors[0].interpolated);
    }

    #[test]
    fn edge_sensor_holds_last_value_then_defaults() {
        let mut pre = Preprocessor::new(&corridor());
        let cfg = GuardConfig { staleness_limit_s: 90.0, ..GuardConfig::default() };
        let all = |t, v| ["A", "B", "C"].iter().map(|id| reading(id, t, [v; 4], [5.0; 4])).collect::<Vec<_>>();
        preprocess(&mut pre, &all(30.0, 42.0), 30.0, &cfg);
        // A and B keep reporting, C (edge) goes silent
        let partial = |t| vec![reading("A", t, [60.0; 4], [5.0; 4]), reading("B", t, [60.0; 4], [5.0; 4])];
        preprocess(&mut pre, &partial(60.0), 60.0, &cfg);
        let held = preprocess(&mut pre, &partial(150.0), 150.0, &cfg);
        let c = &held.sensors[2];
        assert!(c.interpolated);
        assert!((c.speed_mph - 42.0).abs() < 1e-12, "{c:?}");
        assert_eq!(c.staleness_s, 90.0);
        let expired = preprocess(&mut pre, &partial(180.0), 180.0, &cfg);
        assert_eq!(expired.sensors[2].speed_mph, 70.0);
        assert!(!expired.degraded);
    }

    #[test]
    fn silent_feed_degrades_after_staleness_limit() {
        let mut pre = Preprocessor::new(&corridor());
        let cfg = GuardConfig { staleness_limit_s: 60.0, ..GuardConfig::default() };
        let all: Vec<_> = ["A", "B", "C"].iter().map(|id| reading(id, 30.0, [50.0; 4], [5.0; 4])).collect();
        preprocess(&mut pre, &all, 30.0, &cfg);
        assert!(!preprocess(&mut pre, &[], 90.0, &cfg).degraded);
        assert!(preprocess(&mut pre, &[], 210.0, &cfg).degraded);
    }

    #[test]
    fn lane_specific_window() {
        let mut pre = Preprocessor::new(&corridor()).for_lane(3);
        let rs: Vec<_> = ["A", "B", "C"]
            .iter()
            .map(|id| reading(id, 30.0, [60.0, 55.0, 50.0, 45.0], [10.0, 20.0, 30.0, 40.0]))
            .collect();
        let out = preprocess(&mut pre, &rs, 30.0, &GuardConfig::default());
        assert_eq!(out.sensors[0].speed_mph, 45.0);
    }
}

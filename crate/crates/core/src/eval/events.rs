//! Congestion event extraction and controller response delay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::field::SpeedField;
use crate::corridor::CorridorConfig;
use crate::guard::Decision;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectedBy {
    GroundTruth,
    Labeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent {
    pub id: usize,
    pub onset_t_s: f64,
    /// Mean travel position of the region at onset.
    pub location_mi: f64,
    pub end_t_s: f64,
    pub detected_by: DetectedBy,
}

/// Time-space box of known recurring congestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t0_s: f64,
    pub t1_s: f64,
    pub x0_mi: f64,
    pub x1_mi: f64,
}

impl Region {
    fn contains(&self, t: f64, x: f64) -> bool {
        (self.t0_s..=self.t1_s).contains(&t) && (self.x0_mi..=self.x1_mi).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    pub threshold_mph: f64,
    /// Smallest region, in grid cells, reported as an event.
    pub min_extent_cells: usize,
    pub recurrent: Vec<Region>,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig { threshold_mph: 40.0, min_extent_cells: 20, recurrent: Vec::new() }
    }
}

/// Connected regions (4-neighbour) of lane-averaged speed below the
/// threshold, excluding any region touching a recurrent mask.
pub fn detect_events<T: Scalar>(
    field: &SpeedField<T>,
    cfg: &EventConfig,
    detected_by: DetectedBy,
) -> Vec<CongestionEvent> {
    let (nt, nx) = (field.nt, field.nx);
    let lanes = field.lanes.max(1);
    let below: Vec<bool> = (0..nt)
        .flat_map(|k| (0..nx).map(move |i| (k, i)))
        .map(|(k, i)| (0..lanes).map(|l| field.get(k, i, l).f64()).sum::<f64>() / (lanes as f64) < cfg.threshold_mph)
        .collect();
    let mut seen = vec![false; nt * nx];
    let mut events = Vec::new();
    for start in 0..nt * nx {
        if !below[start] || seen[start] {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut cells = Vec::new();
        while let Some(c) = queue.pop_front() {
            cells.push(c);
            let (k, i) = (c / nx, c % nx);
            let mut push = |n: usize| {
                if below[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if k > 0 {
                push(c - nx);
            }
            if k + 1 < nt {
                push(c + nx);
            }
            if i > 0 {
                push(c - 1);
            }
            if i + 1 < nx {
                push(c + 1);
            }
        }
        let coord = |c: usize| (field.t0_s + (c / nx) as f64 * field.dt_s, field.x0_mi + (c % nx) as f64 * field.dx_mi);
        if cells.len() < cfg.min_extent_cells {
            continue;
        }
        if cells.iter().any(|&c| {
            let (t, x) = coord(c);
            cfg.recurrent.iter().any(|r| r.contains(t, x))
        }) {
            continue;
        }
        let k_on = cells.iter().map(|c| c / nx).min().expect("non-empty");
        let k_end = cells.iter().map(|c| c / nx).max().expect("non-empty");
        let onset_x: Vec<f64> = cells.iter().filter(|&&c| c / nx == k_on).map(|&c| coord(c).1).collect();
        events.push(CongestionEvent {
            id: 0,
            onset_t_s: field.t0_s + k_on as f64 * field.dt_s,
            location_mi: onset_x.iter().sum::<f64>() / onset_x.len() as f64,
            end_t_s: field.t0_s + (k_end + 1) as f64 * field.dt_s,
            detected_by,
        });
    }
    events.sort_by(|a, b| a.onset_t_s.total_cmp(&b.onset_t_s).then(a.location_mi.total_cmp(&b.location_mi)));
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i;
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDelay {
    pub event_id: usize,
    pub onset_t_s: f64,
    pub response_t_s: Option<f64>,
    /// Seconds from onset to response, or to the horizon when censored.
    pub delay_s: f64,
    pub censored: bool,
}

/// Per event, the first decision at or after onset where a gantry within
/// `radius_mi` posts below its configured maximum.
pub fn response_delay(
    events: &[CongestionEvent],
    decisions: &[Decision],
    corridor: &CorridorConfig,
    radius_mi: f64,
    horizon_s: f64,
) -> Vec<ResponseDelay> {
    let gantries: std::collections::HashMap<&str, (f64, crate::corridor::SpeedLimit)> =
        corridor.gantries.iter().map(|g| (g.id.as_str(), (corridor.position(g.milepost), g.max_limit))).collect();
    events
        .iter()
        .map(|e| {
            let response = decisions
                .iter()
                .filter(|d| d.t_s >= e.onset_t_s - 1e-9)
                .filter(|d| {
                    gantries
                        .get(d.gantry_id.as_str())
                        .is_some_and(|&(x, max)| (x - e.location_mi).abs() <= radius_mi && d.final_limit < max)
                })
                .map(|d| d.t_s)
                .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))));
            match response {
                Some(t) => ResponseDelay {
                    event_id: e.id,
                    onset_t_s: e.onset_t_s,
                    response_t_s: Some(t),
                    delay_s: t - e.onset_t_s,
                    censored: false,
                },
                None => ResponseDelay {
                    event_id: e.id,
                    onset_t_s: e.onset_t_s,
                    response_t_s: None,
                    delay_s: (horizon_s - e.onset_t_s).max(0.0),
                    censored: true,
                },
            }
        })
        .collect()
}

/// Summary statistics for a boxplot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayStats {
    pub n: usize,
    pub censored: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl DelayStats {
    /// Censored delays enter at their horizon value.
    pub fn of(delays: &[ResponseDelay]) -> Self {
        if delays.is_empty() {
            return DelayStats::default();
        }
        let mut v: Vec<f64> = delays.iter().map(|d| d.delay_s).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        DelayStats {
            n: v.len(),
            censored: delays.iter().filter(|d| d.censored).count(),
            mean,
            std,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::degraded_decisions;
    use crate::sim::training_corridor;

    fn field(slow: &[(f64, f64, f64, f64)]) -> SpeedField<f64> {
        let slow = slow.to_vec();
        SpeedField::from_fn(0.0, 4.0, 300, 0.01, 0.02, 350, 2, move |t, x, _| {
            if slow.iter().any(|&(t0, t1, x0, x1)| t >= t0 && t < t1 && x >= x0 && x < x1) {
                10.0
            } else {
                65.0
            }
        })
    }

    #[test]
    fn clean_field_has_no_events() {
        assert!(detect_events(&field(&[]), &EventConfig::default(), DetectedBy::GroundTruth).is_empty());
    }

    #[test]
    fn single_and_disjoint_events() {
        let one = detect_events(&field(&[(400.0, 800.0, 2.0, 2.5)]), &EventConfig::default(), DetectedBy::GroundTruth);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].onset_t_s, 400.0);
        assert!((one[0].location_mi - 2.25).abs() < 0.02);
        assert_eq!(one[0].end_t_s, 800.0);
        let two = detect_events(
            &field(&[(400.0, 800.0, 2.0, 2.5), (100.0, 300.0, 5.0, 6.0)]),
            &EventConfig::default(),
            DetectedBy::GroundTruth,
        );
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].onset_t_s, 100.0);
    }

    #[test]
    fn recurrent_mask_excludes_region() {
        let cfg = EventConfig {
            recurrent: vec![Region { t0_s: 0.0, t1_s: 1200.0, x0_mi: 4.9, x1_mi: 5.1 }],
            ..EventConfig::default()
        };
        let ev =
            detect_events(&field(&[(400.0, 800.0, 2.0, 2.5), (100.0, 300.0, 5.0, 6.0)]), &cfg, DetectedBy::Labeled);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detected_by, DetectedBy::Labeled);
    }

    #[test]
    fn delays_and_censoring() {
        let c = training_corridor();
        let t1 = c.gantries.iter().find(|g| g.id == "T1").unwrap();
        let x = c.position(t1.milepost);
        let ev = vec![CongestionEvent {
            id: 0,
            onset_t_s: 100.0,
            location_mi: x,
            end_t_s: 500.0,
            detected_by: DetectedBy::GroundTruth,
        }];
        let mut decisions = Vec::new();
        for k in 0..10u64 {
            let t = 30.0 * (k + 1) as f64;
            let mut batch = degraded_decisions(&c, &c.max_limits(), k, t);
            if t >= 150.0 {
                batch.iter_mut().find(|d| d.gantry_id == "T1").unwrap().final_limit = crate::corridor::SpeedLimit(50);
            }
            decisions.extend(batch);
        }
        let d = response_delay(&ev, &decisions, &c, 0.3, 3600.0);
        assert_eq!(d[0].response_t_s, Some(150.0));
        assert_eq!(d[0].delay_s, 50.0);
        let none = response_delay(&ev, &decisions[..32], &c, 0.3, 3600.0);
        assert!(none[0].censored);
        assert_eq!(none[0].delay_s, 3500.0);
        let s = DelayStats::of(&[d[0].clone(), none[0].clone()]);
        assert_eq!((s.n, s.censored, s.mean), (2, 1, 1775.0));
    }
}

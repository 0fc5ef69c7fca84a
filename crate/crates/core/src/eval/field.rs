//! Gridded speed fields over time, travel position and lane.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corridor::{CorridorConfig, Direction};
use crate::error::EvalError;
use crate::scalar::Scalar;
use crate::sim::{SensorReading, SimLog};

/// Grid spacing in time used for every evaluation field.
pub const FIELD_DT_S: f64 = 4.0;
/// Grid spacing in space used for every evaluation field.
pub const FIELD_DX_MI: f64 = 0.02;

/// Speeds on a regular grid. `x` is travel position from the upstream end
/// of the corridor; grid points sit at `x0 + i·dx` and `t0 + k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedField<T> {
    pub t0_s: f64,
    pub dt_s: f64,
    pub x0_mi: f64,
    pub dx_mi: f64,
    pub nt: usize,
    pub nx: usize,
    pub lanes: usize,
    pub direction: Direction,
    /// Index `(k · lanes + lane) · nx + i`.
    pub values: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct FieldHeader {
    format: u32,
    t0_s: f64,
    dt_s: f64,
    x0_mi: f64,
    dx_mi: f64,
    nt: usize,
    nx: usize,
    lanes: usize,
    direction: Direction,
}

impl<T: Scalar> SpeedField<T> {
    /// Field filled with `value`.
    pub fn constant(value: f64, t0: f64, dt: f64, nt: usize, x0: f64, dx: f64, nx: usize, lanes: usize) -> Self {
        SpeedField {
            t0_s: t0,
            dt_s: dt,
            x0_mi: x0,
            dx_mi: dx,
            nt,
            nx,
            lanes,
            direction: Direction::WB,
            values: vec![T::of(value); nt * nx * lanes],
        }
    }

    /// Builds a field by evaluating `f(t, x, lane)` at every grid point.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fn(
        t0: f64,
        dt: f64,
        nt: usize,
        x0: f64,
        dx: f64,
        nx: usize,
        lanes: usize,
        f: impl Fn(f64, f64, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(nt * nx * lanes);
        for k in 0..nt {
            for l in 0..lanes {
                for i in 0..nx {
                    values.push(T::of(f(t0 + k as f64 * dt, x0 + i as f64 * dx, l).max(0.0)));
                }
            }
        }
        SpeedField { t0_s: t0, dt_s: dt, x0_mi: x0, dx_mi: dx, nt, nx, lanes, direction: Direction::WB, values }
    }

    pub fn t_end(&self) -> f64 {
        self.t0_s + (self.nt.saturating_sub(1)) as f64 * self.dt_s
    }

    pub fn x_end(&self) -> f64 {
        self.x0_mi + (self.nx.saturating_sub(1)) as f64 * self.dx_mi
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        t >= self.t0_s - 1e-9 && t <= self.t_end() + 1e-9 && x >= self.x0_mi - 1e-9 && x <= self.x_end() + 1e-9
    }

    pub fn get(&self, k: usize, i: usize, lane: usize) -> T {
        self.values[(k * self.lanes + lane) * self.nx + i]
    }

    fn set(&mut self, k: usize, i: usize, lane: usize, v: T) {
        let nx = self.nx;
        let lanes = self.lanes;
        self.values[(k * lanes + lane) * nx + i] = v;
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn sample(&self, t: f64, x: f64, lane: usize) -> Option<T> {
        if !self.contains(t, x) || lane >= self.lanes {
            return None;
        }
        let locate = |v: f64, v0: f64, d: f64, n: usize| -> (usize, f64) {
            if n < 2 {
                return (0, 0.0);
            }
            let f = ((v - v0) / d).clamp(0.0, (n - 1) as f64);
            let i = (f.floor() as usize).min(n - 2);
            (i, f - i as f64)
        };
        let (k, ft) = locate(t, self.t0_s, self.dt_s, self.nt);
        let (i, fx) = locate(x, self.x0_mi, self.dx_mi, self.nx);
        let k1 = (k + 1).min(self.nt - 1);
        let i1 = (i + 1).min(self.nx - 1);
        let (ft, fx) = (T::of(ft), T::of(fx));
        let one = T::one();
        let a = self.get(k, i, lane) * (one - fx) + self.get(k, i1, lane) * fx;
        let b = self.get(k1, i, lane) * (one - fx) + self.get(k1, i1, lane) * fx;
        Some(a * (one - ft) + b * ft)
    }

    /// Mean over lanes as a single-lane field.
    pub fn lane_average(&self) -> SpeedField<T> {
        let mut out = SpeedField { lanes: 1, values: vec![T::zero(); self.nt * self.nx], ..self.clone() };
        let n = T::of(self.lanes as f64);
        for k in 0..self.nt {
            for i in 0..self.nx {
                let s = (0..self.lanes).map(|l| self.get(k, i, l)).sum::<T>();
                out.set(k, i, 0, s / n);
            }
        }
        out
    }

    pub fn write(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = BufWriter::new(out);
        let header = FieldHeader {
            format: 1,
            t0_s: self.t0_s,
            dt_s: self.dt_s,
            x0_mi: self.x0_mi,
            dx_mi: self.dx_mi,
            nt: self.nt,
            nx: self.nx,
            lanes: self.lanes,
            direction: self.direction,
        };
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| EvalError::Field(e.to_string()))?)?;
        for row in self.values.chunks(self.nx.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.f64().to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(input: impl Read) -> Result<Self, EvalError> {
        let mut lines = BufReader::new(input).lines();
        let head = lines.next().ok_or_else(|| EvalError::Field("empty file".into()))??;
        let h: FieldHeader = serde_json::from_str(&head).map_err(|e| EvalError::Field(format!("header: {e}")))?;
        if h.format != 1 {
            return Err(EvalError::Field(format!("unsupported format {}", h.format)));
        }
        let mut values = Vec::with_capacity(h.nt * h.nx * h.lanes);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| EvalError::Field(format!("line {}: {e}", n + 2)))?;
            if row.len() != h.nx || row.iter().any(|v| !(*v >= 0.0)) {
                return Err(EvalError::Field(format!("line {}: expected {} non-negative values", n + 2, h.nx)));
            }
            values.extend(row.into_iter().map(T::of));
        }
        if values.len() != h.nt * h.nx * h.lanes {
            return Err(EvalError::Field(format!("expected {} values, found {}", h.nt * h.nx * h.lanes, values.len())));
        }
        Ok(SpeedField {
            t0_s: h.t0_s,
            dt_s: h.dt_s,
            x0_mi: h.x0_mi,
            dx_mi: h.dx_mi,
            nt: h.nt,
            nx: h.nx,
            lanes: h.lanes,
            direction: h.direction,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::read(std::fs::File::open(path)?)
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&p| p >= x) {
        None => *ys.last().expect("non-empty"),
        Some(0) => ys[0],
        Some(j) => {
            let f = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
            ys[j - 1] + f * (ys[j] - ys[j - 1])
        }
    }
}

/// Resamples simulator snapshots onto the evaluation grid, adding the
/// per-lane speed offsets.
pub fn ground_truth_field<T: Scalar>(log: &SimLog, direction: Direction) -> Result<SpeedField<T>, EvalError> {
    if log.snapshots.len() < 2 {
        return Err(EvalError::Field("need at least two snapshots".into()));
    }
    let dt = log.snapshots[1].t_s - log.snapshots[0].t_s;
    let nx = (log.length_miles / FIELD_DX_MI).round() as usize;
    let lanes = (log.lanes as usize).max(1);
    let n_cells = log.snapshots[0].speed.len();
    let centers: Vec<f64> = (0..n_cells).map(|c| (c as f64 + 0.5) * log.cell_length_miles).collect();
    let mut values = Vec::with_capacity(log.snapshots.len() * lanes * nx);
    for snap in &log.snapshots {
        let row: Vec<f64> =
            (0..nx).map(|i| interp_linear(&centers, &snap.speed, (i as f64 + 0.5) * FIELD_DX_MI)).collect();
        for l in 0..lanes {
            let off = log.lane_speed_offsets_mph.get(l).copied().unwrap_or(0.0);
            values.extend(row.iter().map(|v| T::of((v + off).max(0.0))));
        }
    }
    Ok(SpeedField {
        t0_s: log.snapshots[0].t_s,
        dt_s: dt,
        x0_mi: FIELD_DX_MI / 2.0,
        dx_mi: FIELD_DX_MI,
        nt: log.snapshots.len(),
        nx,
        lanes,
        direction,
        values,
    })
}

/// Field seen by roadside sensors: each 30-s reading holds over its
/// averaging interval and is interpolated linearly between sensors.
/// `like` supplies the grid.
pub fn coarse_field<T: Scalar>(
    readings: &[SensorReading],
    corridor: &CorridorConfig,
    like: &SpeedField<T>,
) -> Result<SpeedField<T>, EvalError> {
    let positions: HashMap<&str, f64> =
        corridor.sensors.iter().map(|s| (s.id.as_str(), corridor.position(s.milepost))).collect();
    // readings grouped by timestamp, sorted
    let mut by_time: Vec<(f64, Vec<&SensorReading>)> = Vec::new();
    let mut sorted: Vec<&SensorReading> =
        readings.iter().filter(|r| positions.contains_key(r.sensor_id.as_str())).collect();
    sorted.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    for r in sorted {
        match by_time.last_mut() {
            Some((t, v)) if (*t - r.timestamp_s).abs() < 1e-6 => v.push(r),
            _ => by_time.push((r.timestamp_s, vec![r])),
        }
    }
    if by_time.is_empty() {
        return Err(EvalError::Field("no sensor readings".into()));
    }
    let lanes = like.lanes;
    let mut out = like.clone();
    for k in 0..like.nt {
        let t = like.t0_s + k as f64 * like.dt_s;
        // first interval whose end is at or after t
        let j = by_time.iter().position(|(ts, _)| *ts >= t - 1e-9).unwrap_or(by_time.len() - 1);
        let mut group: Vec<(f64, &SensorReading)> =
            by_time[j].1.iter().map(|r| (positions[r.sensor_id.as_str()], *r)).collect();
        group.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = group.iter().map(|g| g.0).collect();
        for l in 0..lanes {
            let ys: Vec<f64> = group
                .iter()
                .map(|(_, r)| {
                    if lanes == 1 {
                        r.speed.iter().sum::<f64>() / r.speed.len().max(1) as f64
                    } else {
                        r.speed.get(l).copied().unwrap_or(0.0)
                    }
                })
                .collect();
            for i in 0..like.nx {
                let x = like.x0_mi + i as f64 * like.dx_mi;
                out.set(k, i, l, T::of(interp_linear(&xs, &ys, x).max(0.0)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Snapshot;

    #[test]
    fn bilinear_is_exact_for_bilinear_functions() {
        let f = |t: f64, x: f64, _l: usize| 10.0 + 0.01 * t + 3.0 * x + 0.002 * t * x;
        let field = SpeedField::<f64>::from_fn(0.0, 4.0, 30, 0.01, 0.02, 50, 1, f);
        for &(t, x) in &[(5.3, 0.33), (100.0, 0.9), (0.0, 0.01), (116.0, 0.99)] {
            assert!((field.sample(t, x, 0).unwrap() - f(t, x, 0)).abs() < 1e-9);
        }
        assert!(field.sample(117.0, 0.5, 0).is_none());
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let field = SpeedField::<f64>::from_fn(8.0, 4.0, 5, 0.01, 0.02, 7, 2, |t, x, l| {
            t.sin().abs() * 60.0 + x / 3.0 + l as f64
        });
        let mut buf = Vec::new();
        field.write(&mut buf).unwrap();
        assert_eq!(SpeedField::<f64>::read(&buf[..]).unwrap(), field);
    }

    #[test]
    fn rejects_negative_speed() {
        let text = "{\"format\":1,\"t0_s\":0,\"dt_s\":4,\"x0_mi\":0,\"dx_mi\":0.02,\"nt\":1,\"nx\":2,\"lanes\":1,\"direction\":\"WB\"}\n1,-2\n";
        assert!(SpeedField::<f64>::read(text.as_bytes()).is_err());
    }

    #[test]
    fn ground_truth_adds_lane_offsets() {
        let log = SimLog {
            cell_length_miles: 0.1,
            length_miles: 0.2,
            lane_speed_offsets_mph: vec![-3.0, 3.0],
            lanes: 2,
            snapshots: (0..3)
                .map(|k| Snapshot { t_s: 4.0 * k as f64, speed: vec![50.0, 60.0], density: vec![0.0; 2] })
                .collect(),
        };
        let f: SpeedField<f64> = ground_truth_field(&log, Direction::WB).unwrap();
        assert_eq!((f.nt, f.nx, f.lanes), (3, 10, 2));
        assert!((f.get(0, 0, 0) - 47.0).abs() < 1e-12);
        assert!((f.get(0, 9, 1) - 63.0).abs() < 1e-12);
        // midway between cell centres
        assert!((f.sample(0.0, 0.1, 0).unwrap() - 52.0).abs() < 1e-9);
    }

    #[test]
    fn lane_average_of_offsets() {
        let f = SpeedField::<f32>::from_fn(0.0, 4.0, 2, 0.01, 0.02, 3, 4, |_, _, l| 60.0 + l as f64);
        let a = f.lane_average();
        assert_eq!(a.lanes, 1);
        assert!((a.get(1, 2, 0) - 61.5).abs() < 1e-5);
    }
}

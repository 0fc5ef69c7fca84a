//! Macroscopic cell-transmission simulator standing in for a microscopic
//! traffic model.
//!
//! The road is cut into cells of equal length. Each sub-step moves vehicles
//! between neighbouring cells using the demand/supply rule of a trapezoidal
//! fundamental diagram whose free-flow branch is capped by the posted limit
//! blended with the compliance rate. On-ramps merge with priority
//! proportional to lane counts; unserved demand waits in vertical queues.

mod scenario;

pub use scenario::{
    build_testing_scenario, build_training_scenario, congested_suite, i24_westbound, incident_suite, training_corridor,
    TestingOptions,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corridor::{CorridorConfig, SpeedLimit};
use crate::error::{ConfigError, SimError};

/// Sensor sampling period.
pub const SENSOR_PERIOD_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandStep {
    pub start_s: f64,
    pub vphpl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub milepost: f64,
    pub lanes: u32,
    pub demand_profile: Vec<DemandStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentEvent {
    pub id: String,
    pub milepost: f64,
    pub start_s: f64,
    pub end_s: f64,
    /// Remaining fraction of capacity while active.
    pub capacity_fraction: f64,
}

fn default_cell() -> f64 {
    0.1
}
fn default_ff() -> f64 {
    70.0
}
fn default_jam() -> f64 {
    220.0
}
fn default_wave() -> f64 {
    15.0
}
fn default_cap() -> f64 {
    1900.0
}
fn default_compliance() -> f64 {
    0.05
}
fn default_k() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_record() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_cell")]
    pub cell_length_miles: f64,
    #[serde(default = "default_ff")]
    pub free_flow_mph: f64,
    #[serde(default = "default_jam")]
    pub jam_density_vpm_per_lane: f64,
    #[serde(default = "default_wave")]
    pub backward_wave_mph: f64,
    #[serde(default = "default_cap")]
    pub capacity_vphpl: f64,
    pub mainline_demand_profile: Vec<DemandStep>,
    #[serde(default)]
    pub ramps: Vec<Ramp>,
    #[serde(default)]
    pub incidents: Vec<IncidentEvent>,
    #[serde(default = "default_compliance")]
    pub compliance_rate: f64,
    /// Multiplier turning the nominal compliance rate into the effective one.
    #[serde(default = "default_k")]
    pub compliance_multiplier: f64,
    #[serde(default = "default_noise")]
    pub sensor_noise_mph: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Per-lane additive speed offsets applied to lane-resolved outputs.
    #[serde(default)]
    pub lane_speed_offsets_mph: Vec<f64>,
    /// Start from the free-flow equilibrium of the initial demand instead of an empty road.
    #[serde(default = "default_true")]
    pub initial_fill: bool,
    /// Snapshot interval of the ground-truth log; zero disables recording.
    #[serde(default = "default_record")]
    pub record_interval_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn critical_density(&self) -> f64 {
        self.capacity_vphpl / self.free_flow_mph
    }

    pub fn effective_compliance(&self) -> f64 {
        (self.compliance_multiplier * self.compliance_rate).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.cell_length_miles > 0.0 && self.free_flow_mph > 0.0 && self.backward_wave_mph > 0.0) {
            return bad("cell length, free-flow speed and wave speed must be positive");
        }
        if !(self.capacity_vphpl > 0.0 && self.jam_density_vpm_per_lane > self.critical_density()) {
            return bad("capacity must be positive and critical density below jam density");
        }
        let peak = self.free_flow_mph * self.backward_wave_mph * self.jam_density_vpm_per_lane
            / (self.free_flow_mph + self.backward_wave_mph);
        if self.capacity_vphpl > peak + 1e-9 {
            return bad("capacity exceeds the triangular fundamental-diagram peak");
        }
        if !(0.0..=1.0).contains(&self.compliance_rate) {
            return bad("compliance_rate must lie in [0, 1]");
        }
        if !(self.dt_s > 0.0 && self.dt_s <= 1.0) {
            return bad("dt_s must lie in (0, 1]");
        }
        if self.free_flow_mph / 3600.0 * self.dt_s > self.cell_length_miles + 1e-12 {
            return bad("CFL condition violated: free_flow * dt exceeds the cell length");
        }
        for inc in &self.incidents {
            if !(inc.start_s < inc.end_s) || !(0.0..1.0).contains(&inc.capacity_fraction) {
                return bad("incident needs start_s < end_s and capacity_fraction in [0, 1)");
            }
        }
        if self.mainline_demand_profile.is_empty() {
            return bad("mainline demand profile is empty");
        }
        Ok(())
    }
}

fn demand_at(profile: &[DemandStep], t: f64) -> f64 {
    profile.iter().take_while(|s| s.start_s <= t).last().map_or(0.0, |s| s.vphpl)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    /// veh / mile / lane
    pub density: f64,
    pub speed: f64,
    /// veh / h / lane leaving the cell during the last sub-step
    pub flow_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    /// End of the 30-s averaging interval.
    pub timestamp_s: f64,
    pub speed: Vec<f64>,
    pub volume: Vec<f64>,
    pub occupancy: Vec<f64>,
}

impl SensorReading {
    /// Volume-weighted mean speed across lanes; plain mean when no volume.
    pub fn volume_weighted_speed(&self) -> f64 {
        volume_weighted(self.speed.iter().copied().zip(self.volume.iter().copied()))
    }
}

pub(crate) fn volume_weighted(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let (num, den) = pairs.clone().fold((0.0, 0.0), |(n, d), (v, q)| (n + v * q, d + q));
    if den > 0.0 {
        num / den
    } else {
        let (sum, count) = pairs.fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Snapshot of every cell at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t_s: f64,
    pub speed: Vec<f64>,
    pub density: Vec<f64>,
}

/// Ground-truth record of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimLog {
    pub cell_length_miles: f64,
    pub length_miles: f64,
    pub lane_speed_offsets_mph: Vec<f64>,
    pub lanes: u32,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, Default)]
struct SensorAccumulator {
    speed_time: f64,
    volume: f64,
    occupancy_time: f64,
    elapsed: f64,
}

#[derive(Debug, Clone)]
struct RampState {
    cell: usize,
    lanes: f64,
    queue: f64,
    profile: Vec<DemandStep>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    lanes: f64,
    cells: Vec<CellState>,
    /// Gantry whose limit governs each cell, if any.
    coverage: Vec<Option<usize>>,
    n_gantries: usize,
    ramps: Vec<RampState>,
    entry_queue: f64,
    sensors: Vec<(String, usize)>,
    acc: Vec<SensorAccumulator>,
    incident_cells: Vec<usize>,
    t: f64,
    entered: f64,
    exited: f64,
    last_residual: f64,
    rng: ChaCha8Rng,
    log: SimLog,
    next_record: f64,
}

impl Simulator {
    pub fn new(corridor: &CorridorConfig, cfg: SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = (corridor.length_miles / cfg.cell_length_miles).round().max(1.0) as usize;
        let cell_of = |pos: f64| ((pos / cfg.cell_length_miles).floor() as usize).min(n - 1);
        let gantry_pos = corridor.gantry_positions();
        let coverage = (0..n)
            .map(|c| {
                let center = (c as f64 + 0.5) * cfg.cell_length_miles;
                gantry_pos
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p <= center + 1e-9)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
            })
            .collect();
        let ramps = cfg
            .ramps
            .iter()
            .map(|r| RampState {
                cell: cell_of(corridor.position(r.milepost)),
                lanes: f64::from(r.lanes),
                queue: 0.0,
                profile: r.demand_profile.clone(),
            })
            .collect();
        let sensors: Vec<(String, usize)> =
            corridor.sensors.iter().map(|s| (s.id.clone(), cell_of(corridor.position(s.milepost)))).collect();
        let incident_cells = cfg.incidents.iter().map(|i| cell_of(corridor.position(i.milepost))).collect();
        let lanes = f64::from(corridor.lanes);
        let mut sim = Simulator {
            lanes,
            cells: vec![CellState { density: 0.0, speed: cfg.free_flow_mph, flow_out: 0.0 }; n],
            coverage,
            n_gantries: corridor.n_gantries(),
            ramps,
            entry_queue: 0.0,
            acc: vec![SensorAccumulator::default(); sensors.len()],
            sensors,
            incident_cells,
            t: 0.0,
            entered: 0.0,
            exited: 0.0,
            last_residual: 0.0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            log: SimLog {
                cell_length_miles: cfg.cell_length_miles,
                length_miles: corridor.length_miles,
                lane_speed_offsets_mph: cfg.lane_speed_offsets_mph.clone(),
                lanes: corridor.lanes,
                snapshots: Vec::new(),
            },
            next_record: 0.0,
            cfg,
        };
        if sim.cfg.initial_fill {
            sim.fill_initial();
        }
        sim.record_if_due();
        Ok(sim)
    }

    fn fill_initial(&mut self) {
        let mut q = demand_at(&self.cfg.mainline_demand_profile, 0.0);
        let ff = self.cfg.free_flow_mph;
        for c in 0..self.cells.len() {
            for r in &self.ramps {
                if r.cell == c {
                    q += demand_at(&r.profile, 0.0) * r.lanes / self.lanes;
                }
            }
            let density = q.min(self.cfg.capacity_vphpl) / ff;
            self.cells[c] = CellState { density, speed: ff, flow_out: density * ff };
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn log(&self) -> &SimLog {
        &self.log
    }

    pub fn into_log(self) -> SimLog {
        self.log
    }

    /// Vehicles currently on the mainline cells.
    pub fn stored_vehicles(&self) -> f64 {
        self.cells.iter().map(|c| c.density).sum::<f64>() * self.lanes * self.cfg.cell_length_miles
    }

    pub fn queued_vehicles(&self) -> f64 {
        self.entry_queue + self.ramps.iter().map(|r| r.queue).sum::<f64>()
    }

    /// (vehicles entered, vehicles exited) since the start.
    pub fn cumulative_flows(&self) -> (f64, f64) {
        (self.entered, self.exited)
    }

    /// |inflow − outflow − Δstorage| of the last sub-step, in vehicles.
    pub fn conservation_residual(&self) -> f64 {
        self.last_residual
    }

    /// Adds an incident at runtime (operator injection).
    pub fn inject_incident(&mut self, corridor: &CorridorConfig, incident: IncidentEvent) {
        let n = self.cells.len();
        let cell = ((corridor.position(incident.milepost) / self.cfg.cell_length_miles).floor() as usize).min(n - 1);
        self.incident_cells.push(cell);
        self.cfg.incidents.push(incident);
    }

    /// Speed cap of a cell under the blended compliance model.
    pub fn speed_cap(&self, cell: usize, vsl: &[SpeedLimit]) -> f64 {
        let ff = self.cfg.free_flow_mph;
        match self.coverage[cell] {
            Some(g) => {
                let c = self.cfg.effective_compliance();
                (c * vsl[g].as_f64() + (1.0 - c) * ff).min(ff)
            }
            None => ff,
        }
    }

    fn capacity_factor(&self, cell: usize) -> f64 {
        self.cfg
            .incidents
            .iter()
            .zip(&self.incident_cells)
            .filter(|(inc, &c)| c == cell && inc.start_s <= self.t && self.t < inc.end_s)
            .map(|(inc, _)| inc.capacity_fraction)
            .fold(1.0, f64::min)
    }

    /// Per-lane capacity of the (possibly capped) fundamental diagram.
    fn cell_capacity(&self, cell: usize, cap_speed: f64) -> f64 {
        let w = self.cfg.backward_wave_mph;
        let jam = self.cfg.jam_density_vpm_per_lane;
        let peak = cap_speed * w * jam / (cap_speed + w);
        (self.cfg.capacity_vphpl * self.capacity_factor(cell)).min(peak)
    }

    /// Advances one sub-step of `dt` seconds under the given posted limits.
    pub fn step(&mut self, vsl: &[SpeedLimit], dt: f64) -> Result<(), SimError> {
        if vsl.len() != self.n_gantries {
            return Err(SimError::ProfileLength { expected: self.n_gantries, got: vsl.len() });
        }
        let bound = self.cfg.cell_length_miles / self.cfg.free_flow_mph * 3600.0;
        if !(dt > 0.0 && dt <= 1.0 && dt <= bound + 1e-12) {
            return Err(SimError::Cfl { dt, bound: bound.min(1.0) });
        }
        let n = self.cells.len();
        let lanes = self.lanes;
        let w = self.cfg.backward_wave_mph;
        let jam = self.cfg.jam_density_vpm_per_lane;
        let caps: Vec<f64> = (0..n).map(|c| self.speed_cap(c, vsl)).collect();
        let qmax: Vec<f64> = (0..n).map(|c| self.cell_capacity(c, caps[c])).collect();
        // veh/h over all lanes
        let send: Vec<f64> = (0..n).map(|c| lanes * (caps[c] * self.cells[c].density).min(qmax[c])).collect();
        let recv: Vec<f64> = (0..n).map(|c| lanes * qmax[c].min(w * (jam - self.cells[c].density)).max(0.0)).collect();

        let hours = dt / 3600.0;
        // inflow into each cell from upstream (index c), outflow of each cell
        let mut inflow = vec![0.0; n];
        let mut outflow = vec![0.0; n];
        let mut ramp_in = vec![0.0; self.ramps.len()];

        let main_demand = demand_at(&self.cfg.mainline_demand_profile, self.t) * lanes;
        let entry_send = main_demand + self.entry_queue / hours;

        for c in 0..n {
            let upstream_send = if c == 0 { entry_send } else { send[c - 1] };
            let ramp_ix: Vec<usize> = (0..self.ramps.len()).filter(|&r| self.ramps[r].cell == c).collect();
            let (main_flow, ramp_flows) = if ramp_ix.is_empty() {
                (upstream_send.min(recv[c]), Vec::new())
            } else {
                let ramp_send: Vec<f64> = ramp_ix
                    .iter()
                    .map(|&r| {
                        let rs = &self.ramps[r];
                        let demand = demand_at(&rs.profile, self.t) * rs.lanes + rs.queue / hours;
                        demand.min(rs.lanes * self.cfg.capacity_vphpl)
                    })
                    .collect();
                merge(
                    upstream_send,
                    lanes,
                    &ramp_send,
                    &ramp_ix.iter().map(|&r| self.ramps[r].lanes).collect::<Vec<_>>(),
                    recv[c],
                )
            };
            inflow[c] = main_flow + ramp_flows.iter().sum::<f64>();
            if c > 0 {
                outflow[c - 1] = main_flow;
            }
            for (k, &r) in ramp_ix.iter().enumerate() {
                ramp_in[r] = ramp_flows[k];
            }
            if c == 0 {
                let entered = main_flow * hours;
                self.entry_queue = (self.entry_queue + main_demand * hours - entered).max(0.0);
            }
        }
        outflow[n - 1] = send[n - 1];

        for (r, rs) in self.ramps.iter_mut().enumerate() {
            let demand = demand_at(&rs.profile, self.t) * rs.lanes * hours;
            rs.queue = (rs.queue + demand - ramp_in[r] * hours).max(0.0);
        }

        let before = self.stored_vehicles();
        let entered = (inflow[0] + ramp_in.iter().sum::<f64>()) * hours;
        let exited = outflow[n - 1] * hours;
        let cell_veh = lanes * self.cfg.cell_length_miles;
        for c in 0..n {
            let density = self.cells[c].density + (inflow[c] - outflow[c]) * hours / cell_veh;
            if !density.is_finite() || density < -1e-9 || density > jam + 1e-6 {
                return Err(SimError::Fault { cell: c, value: density });
            }
            let density = density.clamp(0.0, jam);
            self.cells[c] = CellState {
                density,
                speed: cell_speed(density, caps[c], qmax[c], w, jam),
                flow_out: outflow[c] / lanes,
            };
        }
        let after = self.stored_vehicles();
        self.entered += entered;
        self.exited += exited;
        self.last_residual = (entered - exited - (after - before)).abs();

        for (k, (_, cell)) in self.sensors.iter().enumerate() {
            let state = self.cells[*cell];
            let a = &mut self.acc[k];
            a.speed_time += state.speed * dt;
            a.volume += state.flow_out * hours;
            a.occupancy_time += state.density / jam * dt;
            a.elapsed += dt;
        }
        self.t += dt;
        self.record_if_due();
        Ok(())
    }

    /// Runs sub-steps of `cfg.dt_s` for `duration` seconds.
    pub fn advance(&mut self, vsl: &[SpeedLimit], duration: f64) -> Result<(), SimError> {
        let dt = self.cfg.dt_s;
        let steps = (duration / dt).round() as usize;
        for _ in 0..steps {
            self.step(vsl, dt)?;
        }
        Ok(())
    }

    fn record_if_due(&mut self) {
        let every = self.cfg.record_interval_s;
        if every > 0.0 && self.t + 1e-9 >= self.next_record {
            self.log.snapshots.push(Snapshot {
                t_s: self.t,
                speed: self.cells.iter().map(|c| c.speed).collect(),
                density: self.cells.iter().map(|c| c.density).collect(),
            });
            self.next_record += every;
        }
    }

    /// Per-lane 30-s averages for every sensor, resetting the accumulators.
    pub fn emit_sensor_readings(&mut self, t: f64) -> Result<Vec<SensorReading>, SimError> {
        let k = (t / SENSOR_PERIOD_S).round();
        if (t - k * SENSOR_PERIOD_S).abs() > 1e-6 || (t - self.t).abs() > 1e-6 {
            return Err(SimError::Misaligned(t));
        }
        let lanes = self.lanes as usize;
        let sigma = self.cfg.sensor_noise_mph;
        let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        let mut out = Vec::with_capacity(self.sensors.len());
        for (s, (id, _)) in self.sensors.iter().enumerate() {
            let a = std::mem::take(&mut self.acc[s]);
            let elapsed = a.elapsed.max(f64::EPSILON);
            let base_speed = if a.elapsed > 0.0 { a.speed_time / elapsed } else { self.cfg.free_flow_mph };
            let occupancy = (a.occupancy_time / elapsed).clamp(0.0, 1.0);
            let mut speed = Vec::with_capacity(lanes);
            for l in 0..lanes {
                let offset = self.cfg.lane_speed_offsets_mph.get(l).copied().unwrap_or(0.0);
                let eps = noise.as_ref().map_or(0.0, |d| d.sample(&mut self.rng));
                speed.push((base_speed + offset + eps).max(0.0));
            }
            out.push(SensorReading {
                sensor_id: id.clone(),
                timestamp_s: t,
                speed,
                volume: vec![a.volume; lanes],
                occupancy: vec![occupancy; lanes],
            });
        }
        Ok(out)
    }
}

fn cell_speed(density: f64, cap: f64, qmax: f64, w: f64, jam: f64) -> f64 {
    if density <= 1e-9 {
        return cap;
    }
    let q = (cap * density).min(qmax).min(w * (jam - density)).max(0.0);
    (q / density).min(cap)
}

/// Priority merge of a mainline stream with one or more ramps into a cell
/// with supply `recv`. Returns (mainline flow, ramp flows).
fn merge(main_send: f64, main_lanes: f64, ramp_send: &[f64], ramp_lanes: &[f64], recv: f64) -> (f64, Vec<f64>) {
    let total: f64 = main_send + ramp_send.iter().sum::<f64>();
    if total <= recv {
        return (main_send, ramp_send.to_vec());
    }
    let lanes_total = main_lanes + ramp_lanes.iter().sum::<f64>();
    let mid = |a: f64, b: f64, c: f64| a.min(b).max(a.max(b).min(c));
    let others = |skip: Option<usize>| -> f64 {
        ramp_send.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, s)| s).sum::<f64>()
    };
    let main = mid(main_send, recv - others(None), main_lanes / lanes_total * recv).max(0.0);
    let mut ramps: Vec<f64> = ramp_send
        .iter()
        .enumerate()
        .map(|(i, &s)| mid(s, recv - main_send - others(Some(i)), ramp_lanes[i] / lanes_total * recv).max(0.0))
        .collect();
    // numerical guard: never exceed supply
    let sum = main + ramps.iter().sum::<f64>();
    if sum > recv {
        let scale = recv / sum;
        ramps.iter_mut().for_each(|r| *r *= scale);
        return (main * scale, ramps);
    }
    (main, ramps)
}

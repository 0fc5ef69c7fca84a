//! The eight-agent training environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corridor::{CorridorConfig, SpeedLimit};
use crate::error::TrainError;
use crate::guard::{GuardConfig, Preprocessor};
use crate::policy::TrafficState;
use crate::sim::{build_training_scenario, DemandStep, SimConfig, Simulator, SENSOR_PERIOD_S};

/// Warm-up before the first decision, long enough to fill one window.
const WARMUP_S: f64 = 90.0;

/// Training scenario for one episode seed; demand is scaled by a factor in
/// [0.92, 1.0] so episodes differ beyond sensor noise.
pub fn episode_scenario(seed: u64) -> (CorridorConfig, SimConfig) {
    let (corridor, mut sim) = build_training_scenario();
    let scale = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DE3A).random_range(0.92..=1.0);
    let rescale = |p: &mut Vec<DemandStep>| p.iter_mut().for_each(|s| s.vphpl *= scale);
    rescale(&mut sim.mainline_demand_profile);
    sim.ramps.iter_mut().for_each(|r| rescale(&mut r.demand_profile));
    sim.seed = seed;
    (corridor, sim)
}

/// Light traffic with no ramp, free-flowing throughout.
pub fn free_flow_probe(seed: u64) -> (CorridorConfig, SimConfig) {
    let (corridor, mut sim) = build_training_scenario();
    sim.mainline_demand_profile = vec![DemandStep { start_s: 0.0, vphpl: 900.0 }];
    sim.ramps.clear();
    sim.duration_s = 1800.0;
    sim.seed = seed;
    (corridor, sim)
}

pub struct TrainingEnv {
    pub corridor: CorridorConfig,
    sim: Simulator,
    pre: Preprocessor,
    critical: Vec<usize>,
    guard: GuardConfig,
    states: Vec<TrafficState>,
    step: usize,
    steps: usize,
}

impl TrainingEnv {
    pub fn new(corridor: CorridorConfig, sim: SimConfig) -> Result<Self, TrainError> {
        let steps = (sim.duration_s / SENSOR_PERIOD_S).round() as usize;
        let critical = corridor.critical_sensors()?;
        let sim = Simulator::new(&corridor, sim)?;
        let mut env = TrainingEnv {
            pre: Preprocessor::new(&corridor),
            critical,
            guard: GuardConfig::default(),
            states: Vec::new(),
            step: 0,
            steps,
            sim,
            corridor,
        };
        let all_max = env.corridor.max_limits();
        let mut t = 0.0;
        while t < WARMUP_S - 1e-9 {
            env.states = env.advance(&all_max)?;
            t += SENSOR_PERIOD_S;
        }
        Ok(env)
    }

    pub fn episode(seed: u64) -> Result<Self, TrainError> {
        let (c, s) = episode_scenario(seed);
        Self::new(c, s)
    }

    fn advance(&mut self, vsl: &[SpeedLimit]) -> Result<Vec<TrafficState>, TrainError> {
        self.sim.advance(vsl, SENSOR_PERIOD_S)?;
        let t = self.sim.time();
        let readings = self.sim.emit_sensor_readings(t)?;
        self.pre.ingest(&readings);
        let windows = self.pre.windows(t, &self.guard);
        Ok(self.critical.iter().map(|&s| windows.sensors[s].state()).collect())
    }

    /// Per-agent states, most downstream first.
    pub fn states(&self) -> &[TrafficState] {
        &self.states
    }

    pub fn n_agents(&self) -> usize {
        self.critical.len()
    }

    pub fn done(&self) -> bool {
        self.step >= self.steps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Posts `limits` for one control period and returns the new states.
    pub fn step(&mut self, limits: &[SpeedLimit]) -> Result<&[TrafficState], TrainError> {
        self.states = self.advance(limits)?;
        self.step += 1;
        Ok(&self.states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn congestion_forms_then_clears_under_constant_max() {
        let mut env = TrainingEnv::episode(3).unwrap();
        assert_eq!(env.n_agents(), 8);
        let max = env.corridor.max_limits();
        let mut peak: f64 = 0.0;
        let mut last = Vec::new();
        while !env.done() {
            last = env.step(&max).unwrap().to_vec();
            peak = peak.max(last[0].occupancy);
        }
        assert!(peak > 0.25, "queue should reach the first agent, peak {peak}");
        assert!(last.iter().all(|s| s.occupancy < 0.12), "{last:?}");
    }

    #[test]
    fn probe_is_free_flowing() {
        let (c, s) = free_flow_probe(1);
        let mut env = TrainingEnv::new(c, s).unwrap();
        let max = env.corridor.max_limits();
        while !env.done() {
            let st = env.step(&max).unwrap();
            assert!(st.iter().all(|s| s.occupancy < 0.12));
        }
    }
}

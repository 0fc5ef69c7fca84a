//! Built-in corridors and scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DemandStep, IncidentEvent, Ramp, SimConfig};
use crate::corridor::{CorridorConfig, Direction, Gantry, Sensor, SpeedLimit};

fn base_corridor(name: &str, length: f64, origin: f64, lanes: u32) -> CorridorConfig {
    CorridorConfig {
        name: name.into(),
        direction: Direction::WB,
        length_miles: length,
        origin_milepost: origin,
        gantries: Vec::new(),
        sensors: Vec::new(),
        lanes,
        control_period_s: 30.0,
        min_limit: SpeedLimit(30),
        max_limit_default: SpeedLimit(70),
        action_set: [30, 40, 50, 60, 70].map(SpeedLimit).to_vec(),
        a_diff: 10,
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Travel position of the on-ramp merge in the training corridor.
pub const TRAINING_MERGE_MI: f64 = 5.0;

/// Seven-mile, four-lane westbound stretch with eight gantries at half-mile
/// spacing upstream of a two-lane on-ramp merge.
pub fn training_corridor() -> CorridorConfig {
    let mut c = base_corridor("training-7mi", 7.0, 7.0, 4);
    for k in 1..=8 {
        let x = TRAINING_MERGE_MI - 0.5 * k as f64;
        c.gantries.push(Gantry { id: format!("T{k}"), milepost: round3(7.0 - x), max_limit: SpeedLimit(70) });
        c.sensors.push(Sensor { id: format!("TS{k}"), milepost: round3(7.0 - (x + 0.1)), lanes: 4 });
    }
    for (id, x) in [("TSU", 0.5), ("TSD", 5.5)] {
        c.sensors.push(Sensor { id: id.into(), milepost: round3(7.0 - x), lanes: 4 });
    }
    c.validated().expect("built-in corridor is valid")
}

/// Two-hour training scenario: 1850 veh/lane/h for an hour then half of it,
/// plus a two-lane ramp at 1000 veh/lane/h.
pub fn build_training_scenario() -> (CorridorConfig, SimConfig) {
    let corridor = training_corridor();
    let sim = SimConfig {
        cell_length_miles: 0.1,
        free_flow_mph: 70.0,
        jam_density_vpm_per_lane: 220.0,
        backward_wave_mph: 15.0,
        capacity_vphpl: 1900.0,
        mainline_demand_profile: vec![
            DemandStep { start_s: 0.0, vphpl: 1850.0 },
            DemandStep { start_s: 3600.0, vphpl: 925.0 },
        ],
        ramps: vec![Ramp {
            milepost: 7.0 - TRAINING_MERGE_MI,
            lanes: 2,
            demand_profile: vec![DemandStep { start_s: 0.0, vphpl: 1000.0 }],
        }],
        incidents: Vec::new(),
        compliance_rate: 0.05,
        compliance_multiplier: 4.0,
        sensor_noise_mph: 1.0,
        dt_s: 1.0,
        lane_speed_offsets_mph: Vec::new(),
        initial_fill: true,
        record_interval_s: 0.0,
        duration_s: 7200.0,
        seed: 0,
    };
    (corridor, sim)
}

/// 17-mile westbound deployment layout: 34 gantries at half-mile spacing,
/// 60 sensors, the six most downstream gantries with reduced maximum limits.
pub fn i24_westbound() -> CorridorConfig {
    let mut c = base_corridor("i24-wb-17mi", 17.0, 70.0, 4);
    let skip_midpoint = [4, 9, 14, 19, 24, 28, 32];
    for k in 0..34 {
        let x = 0.25 + 0.5 * k as f64;
        // k counts from upstream; the six most downstream are k = 28..=33
        let max = match k {
            31..=33 => 55,
            28..=30 => 65,
            _ => 70,
        };
        c.gantries.push(Gantry {
            id: format!("G{:02}", 34 - k),
            milepost: round3(70.0 - x),
            max_limit: SpeedLimit(max),
        });
        c.sensors.push(Sensor { id: format!("R{k:02}a"), milepost: round3(70.0 - (x + 0.1)), lanes: 4 });
        if k < 33 && !skip_midpoint.contains(&k) {
            c.sensors.push(Sensor { id: format!("R{k:02}b"), milepost: round3(70.0 - (x + 0.35)), lanes: 4 });
        }
    }
    c.validated().expect("built-in corridor is valid")
}

#[derive(Debug, Clone)]
pub struct TestingOptions {
    pub demand: Vec<DemandStep>,
    pub ramps: Vec<Ramp>,
    pub incidents: Vec<IncidentEvent>,
    pub compliance_rate: f64,
    pub duration_s: f64,
    pub lane_speed_offsets_mph: Vec<f64>,
    pub homogeneous_limits: bool,
    pub seed: u64,
}

impl Default for TestingOptions {
    fn default() -> Self {
        TestingOptions {
            demand: vec![DemandStep { start_s: 0.0, vphpl: 1500.0 }],
            ramps: Vec::new(),
            incidents: Vec::new(),
            compliance_rate: 0.05,
            duration_s: 3600.0,
            lane_speed_offsets_mph: vec![-3.0, -1.0, 1.0, 3.0],
            homogeneous_limits: false,
            seed: 0,
        }
    }
}

impl TestingOptions {
    /// Two on-ramp bottlenecks strong enough to congest the mainline.
    pub fn two_bottlenecks(mut self) -> Self {
        self.demand = vec![DemandStep { start_s: 0.0, vphpl: 1750.0 }];
        self.ramps = [63.0, 57.0]
            .into_iter()
            .map(|mp| Ramp { milepost: mp, lanes: 2, demand_profile: vec![DemandStep { start_s: 0.0, vphpl: 900.0 }] })
            .collect();
        self
    }
}

pub fn build_testing_scenario(options: TestingOptions) -> (CorridorConfig, SimConfig) {
    let mut corridor = i24_westbound();
    if options.homogeneous_limits {
        corridor.gantries.iter_mut().for_each(|g| g.max_limit = SpeedLimit(70));
    }
    let sim = SimConfig {
        cell_length_miles: 0.1,
        free_flow_mph: 70.0,
        jam_density_vpm_per_lane: 220.0,
        backward_wave_mph: 15.0,
        capacity_vphpl: 1900.0,
        mainline_demand_profile: options.demand,
        ramps: options.ramps,
        incidents: options.incidents,
        compliance_rate: options.compliance_rate,
        compliance_multiplier: 4.0,
        sensor_noise_mph: 1.0,
        dt_s: 1.0,
        lane_speed_offsets_mph: options.lane_speed_offsets_mph,
        initial_fill: true,
        record_interval_s: 4.0,
        duration_s: options.duration_s,
        seed: options.seed,
    };
    (corridor, sim)
}

/// `count` single-incident episodes on the deployment corridor. Incident
/// location and start are drawn from `seed`; each blocks 80% of capacity.
pub fn incident_suite(count: usize, seed: u64) -> Vec<(CorridorConfig, SimConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let x: f64 = rng.random_range(3.0..14.0);
            let start: f64 = rng.random_range(600.0..1200.0);
            let incident = IncidentEvent {
                id: format!("inc-{i}"),
                milepost: round3(70.0 - x),
                start_s: start.round(),
                end_s: start.round() + 1200.0,
                capacity_fraction: 0.2,
            };
            build_testing_scenario(TestingOptions {
                demand: vec![DemandStep { start_s: 0.0, vphpl: 1700.0 }],
                incidents: vec![incident],
                duration_s: 2700.0,
                homogeneous_limits: true,
                seed: seed.wrapping_add(i as u64),
                ..TestingOptions::default()
            })
        })
        .collect()
}

/// `count` recurrent-congestion episodes on the deployment corridor with
/// mainline and ramp demand drawn from `seed`.
pub fn congested_suite(count: usize, seed: u64) -> Vec<(CorridorConfig, SimConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0_4637);
    (0..count)
        .map(|i| {
            let mut opts =
                TestingOptions { seed: seed.wrapping_add(i as u64), ..TestingOptions::default() }.two_bottlenecks();
            opts.demand[0].vphpl = rng.random_range(1650.0..1800.0_f64).round();
            let ramp: f64 = rng.random_range(800.0..1000.0_f64).round();
            opts.ramps.iter_mut().for_each(|r| r.demand_profile[0].vphpl = ramp);
            build_testing_scenario(opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_layout() {
        let (c, s) = build_training_scenario();
        assert_eq!(c.gantries.len(), 8);
        let pos = c.gantry_positions();
        for (k, p) in pos.iter().enumerate() {
            assert!((TRAINING_MERGE_MI - p - 0.5 * (k + 1) as f64).abs() < 1e-9);
        }
        assert_eq!(super::super::demand_at(&s.mainline_demand_profile, 1800.0), 1850.0);
        assert_eq!(super::super::demand_at(&s.mainline_demand_profile, 5400.0), 925.0);
        assert_eq!(s.ramps[0].lanes, 2);
        assert_eq!(s.ramps[0].demand_profile[0].vphpl, 1000.0);
        assert_eq!(c.lanes, 4);
        assert_eq!(c.length_miles, 7.0);
        assert_eq!(s.compliance_rate, 0.05);
    }

    #[test]
    fn deployment_layout_counts() {
        let c = i24_westbound();
        assert_eq!(c.gantries.len(), 34);
        assert_eq!(c.sensors.len(), 60);
        let reduced = c.gantries.iter().filter(|g| g.max_limit < SpeedLimit(70)).count();
        assert_eq!(reduced, 6);
        assert!(c.gantries[..6].iter().all(|g| g.max_limit < SpeedLimit(70)));
        let pos = c.gantry_positions();
        assert!(pos.windows(2).all(|w| (w[0] - w[1] - 0.5).abs() < 1e-9));
    }

    #[test]
    fn every_deployment_gantry_has_a_close_downstream_sensor() {
        let c = i24_westbound();
        let sensors = c.critical_sensors().unwrap();
        for (g, &s) in c.gantries.iter().zip(&sensors) {
            let offset = c.position(c.sensors[s].milepost) - c.position(g.milepost);
            assert!((-1e-9..=0.2 + 1e-9).contains(&offset), "gantry {} offset {offset}", g.id);
        }
        // brute-force check against every sensor: nothing closer downstream was skipped
        for (g, &s) in c.gantries.iter().zip(&sensors) {
            let gp = c.position(g.milepost);
            let best = c
                .sensors
                .iter()
                .map(|x| c.position(x.milepost) - gp)
                .filter(|d| *d >= -1e-9)
                .fold(f64::INFINITY, f64::min);
            assert!((c.position(c.sensors[s].milepost) - gp - best).abs() < 1e-12);
        }
    }

    #[test]
    fn assignment_is_monotone_in_travel_direction() {
        let c = i24_westbound();
        let sensors = c.critical_sensors().unwrap();
        let pos: Vec<f64> = sensors.iter().map(|&s| c.position(c.sensors[s].milepost)).collect();
        // gantries are ordered most downstream first
        assert!(pos.windows(2).all(|w| w[0] >= w[1]));
    }
}

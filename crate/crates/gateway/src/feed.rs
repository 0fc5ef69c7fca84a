//! Sources of sensor readings, one control period at a time.

use std::collections::VecDeque;
use std::path::Path;

use vsl_core::log::{read_complete_log, LogHeader, TickRecord};
use vsl_core::sim::{IncidentEvent, SensorReading, SimConfig, Simulator, SENSOR_PERIOD_S};
use vsl_core::{CorridorConfig, SpeedLimit};

use crate::error::GatewayError;
use crate::state::Command;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedTick {
    pub t_s: f64,
    pub readings: Vec<SensorReading>,
    /// Commands recorded with this tick (replay only).
    pub journal: Vec<Command>,
}

pub trait Feed: Send {
    fn is_exhausted(&self) -> bool;

    /// Advances one control period with `posted` on the gantries.
    fn next_tick(&mut self, posted: &[SpeedLimit]) -> Result<FeedTick, GatewayError>;

    /// Returns false when the feed cannot model incidents.
    fn inject_incident(&mut self, incident: IncidentEvent) -> bool;
}

/// Drives the corridor simulator.
pub struct SimFeed {
    corridor: CorridorConfig,
    sim: Simulator,
    end_s: f64,
}

impl SimFeed {
    pub fn new(corridor: &CorridorConfig, cfg: SimConfig) -> Result<Self, GatewayError> {
        let end_s = cfg.duration_s;
        Ok(SimFeed { corridor: corridor.clone(), sim: Simulator::new(corridor, cfg)?, end_s })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }
}

impl Feed for SimFeed {
    fn is_exhausted(&self) -> bool {
        self.sim.time() + SENSOR_PERIOD_S > self.end_s + 1e-9
    }

    fn next_tick(&mut self, posted: &[SpeedLimit]) -> Result<FeedTick, GatewayError> {
        if self.is_exhausted() {
            return Err(GatewayError::FeedExhausted);
        }
        self.sim.advance(posted, SENSOR_PERIOD_S)?;
        let t_s = self.sim.time();
        Ok(FeedTick { t_s, readings: self.sim.emit_sensor_readings(t_s)?, journal: Vec::new() })
    }

    fn inject_incident(&mut self, incident: IncidentEvent) -> bool {
        self.sim.inject_incident(&self.corridor, incident);
        true
    }
}

/// Plays back the sensor readings and operator journal of a recorded log.
#[derive(Debug, Clone)]
pub struct ReplayFeed {
    pub header: LogHeader,
    /// Recorded ticks not yet played, with their parsed journals.
    ticks: VecDeque<(TickRecord, Vec<Command>)>,
    played: Vec<TickRecord>,
}

impl ReplayFeed {
    pub fn ticks(&self) -> impl Iterator<Item = &TickRecord> {
        self.played.iter().chain(self.ticks.iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.played.len() + self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses a complete log into a replay feed. Any unparsable record or
/// journal entry is an error carrying its line number.
pub fn ingest_fixture(path: impl AsRef<Path>) -> Result<ReplayFeed, GatewayError> {
    let log = read_complete_log(path)?;
    let mut line = 1;
    let mut ticks = VecDeque::with_capacity(log.ticks.len());
    for t in log.ticks {
        line += t.sensors.len();
        let mut journal = Vec::with_capacity(t.journal.len());
        for entry in &t.journal {
            line += 1;
            let cmd = serde_json::from_value(entry.clone())
                .map_err(|e| GatewayError::Journal { line, reason: e.to_string() })?;
            journal.push(cmd);
        }
        line += t.decisions.len() + 1;
        ticks.push_back((t, journal));
    }
    Ok(ReplayFeed { header: log.header, ticks, played: Vec::new() })
}

impl Feed for ReplayFeed {
    fn is_exhausted(&self) -> bool {
        self.ticks.is_empty()
    }

    fn next_tick(&mut self, _posted: &[SpeedLimit]) -> Result<FeedTick, GatewayError> {
        let (t, journal) = self.ticks.pop_front().ok_or(GatewayError::FeedExhausted)?;
        let out = FeedTick { t_s: t.t_s, readings: t.sensors.clone(), journal };
        self.played.push(t);
        Ok(out)
    }

    fn inject_incident(&mut self, _incident: IncidentEvent) -> bool {
        false
    }
}

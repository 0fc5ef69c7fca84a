//! The authoritative control loop, independent of any transport.

use std::path::Path;
use std::time::{Duration, Instant};

use vsl_core::guard::{Controller, GuardConfig, GuardPipeline, MarlController};
use vsl_core::log::{read_log, LogHeader, LogWriter, LoopMode, TickRecord, LOG_FORMAT_VERSION};
use vsl_core::{CorridorConfig, Policy, SpeedLimit};

use crate::error::GatewayError;
use crate::feed::Feed;
use crate::protocol::{DecisionBatch, SensorBatch, SnapshotPayload};
use crate::state::{Command, OverrideState};

/// Wall-clock budget for one tick.
pub const TICK_DEADLINE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub decisions: DecisionBatch,
    pub sensors: SensorBatch,
    /// Commands applied at the start of this tick, in order.
    pub applied: Vec<Command>,
    pub elapsed: Duration,
}

pub struct Engine {
    pipeline: GuardPipeline,
    controller: Box<dyn Controller>,
    feed: Box<dyn Feed>,
    base_guard: GuardConfig,
    overrides: OverrideState,
    mode: LoopMode,
    tick: u64,
    t_s: f64,
    posted: Vec<SpeedLimit>,
    latest: Option<DecisionBatch>,
    log: Option<LogWriter>,
    policy_sha256: String,
}

/// Loads a policy file, refusing it when `expected` is given and differs.
pub fn load_policy(path: impl AsRef<Path>, expected: Option<&str>) -> Result<Policy, GatewayError> {
    let policy = Policy::load(path)?;
    if let Some(e) = expected {
        let found = policy.sha256_hex();
        if !found.eq_ignore_ascii_case(e) {
            return Err(GatewayError::PolicyMismatch { expected: e.to_string(), found });
        }
    }
    Ok(policy)
}

impl Engine {
    pub fn new(
        corridor: CorridorConfig,
        policy: Policy,
        feed: Box<dyn Feed>,
        guard: GuardConfig,
        mode: LoopMode,
    ) -> Result<Self, GatewayError> {
        let pipeline = GuardPipeline::new(corridor, guard.clone())?;
        let posted = pipeline.corridor.max_limits();
        Ok(Engine {
            overrides: OverrideState::new(&guard),
            policy_sha256: policy.sha256_hex(),
            controller: Box::new(MarlController { policy }),
            pipeline,
            feed,
            base_guard: guard,
            mode,
            tick: 0,
            t_s: 0.0,
            posted,
            latest: None,
            log: None,
        })
    }

    /// Starts a new log at `path`.
    pub fn with_log(mut self, path: impl AsRef<Path>, run: serde_json::Value) -> Result<Self, GatewayError> {
        self.log = Some(LogWriter::create(path, self.header(run))?);
        Ok(self)
    }

    pub fn header(&self, run: serde_json::Value) -> LogHeader {
        let corridor = self.pipeline.corridor.clone();
        LogHeader {
            format_version: LOG_FORMAT_VERSION,
            corridor_digest: corridor.digest(),
            corridor,
            policy_sha256: self.policy_sha256.clone(),
            guard: self.base_guard.clone(),
            mode: self.mode,
            run,
        }
    }

    /// Rebuilds an engine from the complete ticks of the log at `path` and
    /// continues appending to it. The feed must start from the same state
    /// as the original run; every replayed tick is checked against the log.
    pub fn resume(policy: Policy, feed: Box<dyn Feed>, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let log = read_log(path)?;
        let h = &log.header;
        let found = policy.sha256_hex();
        if found != h.policy_sha256 {
            return Err(GatewayError::PolicyMismatch { expected: h.policy_sha256.clone(), found });
        }
        if h.corridor.digest() != h.corridor_digest {
            return Err(GatewayError::CorridorMismatch {
                expected: h.corridor_digest.clone(),
                found: h.corridor.digest(),
            });
        }
        let mut engine = Engine::new(h.corridor.clone(), policy, feed, h.guard.clone(), h.mode)?;
        for rec in &log.ticks {
            let mut applied = Vec::with_capacity(rec.journal.len());
            for entry in &rec.journal {
                let cmd: Command = serde_json::from_value(entry.clone())
                    .map_err(|e| GatewayError::Diverged { tick: rec.tick, what: format!("journal entry: {e}") })?;
                applied.push(cmd);
            }
            let report = engine.advance(applied, true)?;
            let diverged = |what: &str| GatewayError::Diverged { tick: rec.tick, what: what.into() };
            if report.sensors.readings != rec.sensors {
                return Err(diverged("sensor readings"));
            }
            if report.decisions.decisions != rec.decisions || report.decisions.tick != rec.tick {
                return Err(diverged("decisions"));
            }
        }
        engine.log = Some(LogWriter::resume(path, log.complete_len)?);
        Ok(engine)
    }

    pub fn corridor(&self) -> &CorridorConfig {
        &self.pipeline.corridor
    }

    pub fn mode(&self) -> LoopMode {
        self.mode
    }

    /// Last completed tick, 0 before the first.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn overrides(&self) -> &OverrideState {
        &self.overrides
    }

    pub fn policy_sha256(&self) -> &str {
        &self.policy_sha256
    }

    pub fn is_finished(&self) -> bool {
        self.feed.is_exhausted()
    }

    /// Simulation time of the last completed tick.
    pub fn time_s(&self) -> f64 {
        self.t_s
    }

    pub fn snapshot(&self) -> SnapshotPayload {
        SnapshotPayload {
            corridor_digest: self.pipeline.corridor.digest(),
            corridor: self.pipeline.corridor.clone(),
            mode: self.mode,
            tick: self.tick,
            t_s: self.t_s,
            guard: self.overrides.guard(&self.base_guard),
            overrides: self.overrides.clone(),
            latest: self.latest.clone(),
        }
    }

    /// Applies `commands`, runs one tick and persists it. Returns `None`
    /// once the feed is exhausted; commands are then left unapplied.
    pub fn step(&mut self, commands: Vec<Command>) -> Result<Option<TickReport>, GatewayError> {
        if self.feed.is_exhausted() {
            return Ok(None);
        }
        let report = self.advance(commands, false)?;
        if let Some(log) = &mut self.log {
            let journal = report.applied.iter().map(serde_json::to_value).collect::<Result<Vec<_>, _>>();
            let journal = journal.map_err(|e| vsl_core::error::LogError::Parse { line: 0, reason: e.to_string() })?;
            log.write_tick(&TickRecord {
                tick: report.decisions.tick,
                t_s: report.decisions.t_s,
                degraded: report.decisions.degraded,
                sensors: report.sensors.readings.clone(),
                journal,
                decisions: report.decisions.decisions.clone(),
            })?;
        }
        if report.elapsed > TICK_DEADLINE {
            tracing::warn!(tick = self.tick, elapsed_ms = report.elapsed.as_millis() as u64, "tick over deadline");
        }
        Ok(Some(report))
    }

    /// `resuming` replays journalled commands only, ignoring any journal the
    /// feed itself carries, since the log already holds both.
    fn advance(&mut self, commands: Vec<Command>, resuming: bool) -> Result<TickReport, GatewayError> {
        let started = Instant::now();
        let mut applied = Vec::with_capacity(commands.len());
        for cmd in commands {
            self.apply(&cmd);
            applied.push(cmd);
        }
        let feed_limits = match self.mode {
            LoopMode::Closed => self.posted.clone(),
            LoopMode::Open => self.pipeline.corridor.max_limits(),
        };
        let ft = self.feed.next_tick(&feed_limits)?;
        if !resuming {
            for cmd in ft.journal {
                self.apply(&cmd);
                applied.push(cmd);
            }
        }
        self.tick += 1;
        self.t_s = ft.t_s;
        self.pipeline.config = self.overrides.guard(&self.base_guard);
        let max = self.overrides.effective_max(&self.pipeline.corridor);
        let out = self.pipeline.run_tick(self.controller.as_mut(), &ft.readings, &max, self.tick, self.t_s);
        self.posted = out.decisions.iter().map(|d| d.final_limit).collect();
        let decisions =
            DecisionBatch { tick: self.tick, t_s: self.t_s, degraded: out.degraded, decisions: out.decisions };
        self.latest = Some(decisions.clone());
        Ok(TickReport {
            sensors: SensorBatch { tick: self.tick, t_s: self.t_s, readings: ft.readings },
            decisions,
            applied,
            elapsed: started.elapsed(),
        })
    }

    fn apply(&mut self, cmd: &Command) {
        if let Command::Incident(inc) = cmd {
            if !self.feed.inject_incident(inc.clone()) {
                tracing::info!(id = %inc.id, "feed does not model incidents; recorded only");
            }
        }
        self.overrides.apply(cmd);
    }
}

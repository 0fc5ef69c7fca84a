//! Operator-controlled state and the validated commands that change it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vsl_core::guard::GuardConfig;
use vsl_core::log::LoopMode;
use vsl_core::sim::IncidentEvent;
use vsl_core::{CorridorConfig, SpeedLimit};

use crate::protocol::{Body, ErrorCode, GuardStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideState {
    /// Operator maxima by gantry id. The effective maximum is the lower of
    /// this and the configured one.
    pub max_limits: BTreeMap<String, SpeedLimit>,
    pub speed_matching: bool,
    pub debounce: bool,
    pub incidents: Vec<IncidentEvent>,
}

impl OverrideState {
    pub fn new(guard: &GuardConfig) -> Self {
        OverrideState {
            max_limits: BTreeMap::new(),
            speed_matching: guard.speed_matching,
            debounce: guard.debounce,
            incidents: Vec::new(),
        }
    }

    pub fn effective_max(&self, corridor: &CorridorConfig) -> Vec<SpeedLimit> {
        corridor
            .gantries
            .iter()
            .map(|g| match self.max_limits.get(&g.id) {
                Some(&m) => g.max_limit.min(m),
                None => g.max_limit,
            })
            .collect()
    }

    pub fn guard(&self, base: &GuardConfig) -> GuardConfig {
        GuardConfig { speed_matching: self.speed_matching, debounce: self.debounce, ..base.clone() }
    }

    pub fn apply(&mut self, cmd: &Command) {
        match cmd {
            Command::Override { gantry_ids, max_limit } => {
                for id in gantry_ids {
                    match max_limit {
                        Some(m) => self.max_limits.insert(id.clone(), *m),
                        None => self.max_limits.remove(id),
                    };
                }
            }
            Command::Incident(inc) => self.incidents.push(inc.clone()),
            Command::Toggle { stage: GuardStage::Sm, enabled } => self.speed_matching = *enabled,
            Command::Toggle { stage: GuardStage::Db, enabled } => self.debounce = *enabled,
            Command::Toggle { stage: GuardStage::Mslc, .. } => {}
        }
    }
}

/// A command that passed validation; also the journal entry format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Override { gantry_ids: Vec<String>, max_limit: Option<SpeedLimit> },
    Incident(IncidentEvent),
    Toggle { stage: GuardStage, enabled: bool },
}

/// Checks a client body against the corridor. `now_s` is the time of the
/// next tick boundary, used for incidents without a start.
pub fn validate(
    body: &Body,
    corridor: &CorridorConfig,
    mode: LoopMode,
    seq: u64,
    now_s: f64,
) -> Result<Command, (ErrorCode, String)> {
    match body {
        Body::MaxLimitOverride(o) => {
            if o.gantry_ids.is_empty() {
                return Err((ErrorCode::OutOfRange, "no gantries".into()));
            }
            if let Some(id) = o.gantry_ids.iter().find(|id| !corridor.gantries.iter().any(|g| &g.id == *id)) {
                return Err((ErrorCode::UnknownGantry, format!("unknown gantry {id}")));
            }
            if let Some(m) = o.max_limit {
                let (lo, hi) = (corridor.min_limit.0, corridor.max_limit_default.0);
                if !(lo..=hi).contains(&m) {
                    return Err((ErrorCode::OutOfRange, format!("max limit {m} outside [{lo}, {hi}]")));
                }
            }
            Ok(Command::Override { gantry_ids: o.gantry_ids.clone(), max_limit: o.max_limit.map(SpeedLimit) })
        }
        Body::GuardToggle(t) => match t.stage {
            GuardStage::Mslc => Err((ErrorCode::MslcRequired, "maximum-limit correction cannot be toggled".into())),
            stage => Ok(Command::Toggle { stage, enabled: t.enabled }),
        },
        Body::IncidentCommand(i) => {
            if mode != LoopMode::Closed {
                return Err((ErrorCode::NotClosedLoop, "incidents need a closed-loop simulation".into()));
            }
            let (a, b) = (corridor.milepost_at(0.0), corridor.milepost_at(corridor.length_miles));
            if !(a.min(b)..=a.max(b)).contains(&i.milepost) {
                return Err((ErrorCode::OutOfRange, format!("milepost {} outside corridor", i.milepost)));
            }
            if !(0.0..1.0).contains(&i.capacity_fraction) {
                return Err((ErrorCode::OutOfRange, "capacity fraction must be in [0, 1)".into()));
            }
            if !(i.duration_s > 0.0 && i.duration_s.is_finite()) {
                return Err((ErrorCode::OutOfRange, "duration must be positive".into()));
            }
            let start = i.start_s.unwrap_or(now_s).max(now_s);
            Ok(Command::Incident(IncidentEvent {
                id: i.id.clone().unwrap_or_else(|| format!("op-{seq}")),
                milepost: i.milepost,
                start_s: start,
                end_s: start + i.duration_s,
                capacity_fraction: i.capacity_fraction,
            }))
        }
        _ => Err((ErrorCode::NotACommand, "not a command".into())),
    }
}

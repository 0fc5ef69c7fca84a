//! Static corridor description: gantries, sensors, segment limits and the
//! sensor-to-gantry assignment.
//!
//! All downstream reasoning happens in "travel position" space: miles from the
//! upstream end of the corridor, increasing in the direction of travel. The
//! milepost convention of the geographic direction is resolved here and
//! nowhere else.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

/// A posted speed limit in mph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedLimit(pub u16);

impl SpeedLimit {
    pub const fn mph(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
}

impl fmt::Display for SpeedLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for SpeedLimit {
    fn from(v: u16) -> Self {
        SpeedLimit(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Mileposts decrease in the direction of travel.
    WB,
    /// Mileposts increase in the direction of travel.
    EB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gantry {
    pub id: String,
    pub milepost: f64,
    pub max_limit: SpeedLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    pub milepost: f64,
    pub lanes: u32,
}

/// Search radius (miles) for the preferred downstream sensor.
pub const SENSOR_SEARCH_RADIUS_MI: f64 = 0.3;

fn default_period() -> f64 {
    30.0
}
fn default_min() -> SpeedLimit {
    SpeedLimit(30)
}
fn default_max() -> SpeedLimit {
    SpeedLimit(70)
}
fn default_actions() -> Vec<SpeedLimit> {
    [30, 40, 50, 60, 70].map(SpeedLimit).to_vec()
}
fn default_diff() -> u16 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorConfig {
    pub name: String,
    pub direction: Direction,
    pub length_miles: f64,
    /// Milepost of the upstream end of the corridor.
    pub origin_milepost: f64,
    /// Ordered most-downstream first once validated.
    pub gantries: Vec<Gantry>,
    /// Ordered upstream to downstream once validated.
    pub sensors: Vec<Sensor>,
    pub lanes: u32,
    #[serde(default = "default_period")]
    pub control_period_s: f64,
    #[serde(default = "default_min")]
    pub min_limit: SpeedLimit,
    #[serde(default = "default_max")]
    pub max_limit_default: SpeedLimit,
    #[serde(default = "default_actions")]
    pub action_set: Vec<SpeedLimit>,
    #[serde(default = "default_diff")]
    pub a_diff: u16,
}

impl CorridorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: CorridorConfig = toml::from_str(text)?;
        raw.validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Checks invariants and puts gantries/sensors into canonical order.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.length_miles > 0.0) {
            return bad(format!("length_miles must be positive, got {}", self.length_miles));
        }
        if self.lanes == 0 {
            return bad("lanes must be at least 1".into());
        }
        if !(self.control_period_s > 0.0) {
            return bad("control_period_s must be positive".into());
        }
        if self.gantries.is_empty() {
            return Err(ConfigError::NoGantries);
        }
        if self.sensors.is_empty() {
            return Err(ConfigError::NoSensors);
        }
        if self.action_set.is_empty()
            || self.action_set.windows(2).any(|w| w[0] >= w[1])
            || self.action_set.iter().any(|a| a.0 % 10 != 0)
        {
            return bad("action_set must be strictly increasing multiples of 10".into());
        }
        if self.min_limit > self.max_limit_default {
            return bad("min_limit exceeds max_limit_default".into());
        }
        for g in &self.gantries {
            if g.max_limit < self.min_limit || g.max_limit > self.max_limit_default {
                return bad(format!(
                    "gantry {} max_limit {} outside [{}, {}]",
                    g.id, g.max_limit, self.min_limit, self.max_limit_default
                ));
            }
        }
        let extent = -1e-9..=self.length_miles + 1e-9;
        for (what, id, mp) in self
            .gantries
            .iter()
            .map(|g| ("gantry", &g.id, g.milepost))
            .chain(self.sensors.iter().map(|s| ("sensor", &s.id, s.milepost)))
        {
            if !extent.contains(&self.position(mp)) {
                return bad(format!("{what} {id} at MM {mp} lies outside the corridor"));
            }
        }
        let dir = self.direction;
        let origin = self.origin_milepost;
        let pos = |mp: f64| travel_position(dir, origin, mp);
        self.gantries.sort_by(|a, b| pos(b.milepost).total_cmp(&pos(a.milepost)));
        self.sensors.sort_by(|a, b| pos(a.milepost).total_cmp(&pos(b.milepost)));
        Ok(self)
    }

    /// Miles from the upstream end, increasing in the direction of travel.
    pub fn position(&self, milepost: f64) -> f64 {
        travel_position(self.direction, self.origin_milepost, milepost)
    }

    pub fn milepost_at(&self, position: f64) -> f64 {
        match self.direction {
            Direction::WB => self.origin_milepost - position,
            Direction::EB => self.origin_milepost + position,
        }
    }

    pub fn gantry_positions(&self) -> Vec<f64> {
        self.gantries.iter().map(|g| self.position(g.milepost)).collect()
    }

    pub fn sensor_positions(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| self.position(s.milepost)).collect()
    }

    pub fn max_limits(&self) -> Vec<SpeedLimit> {
        self.gantries.iter().map(|g| g.max_limit).collect()
    }

    pub fn n_gantries(&self) -> usize {
        self.gantries.len()
    }

    /// Index (into `sensors`) of the sensor that feeds `gantry`.
    ///
    /// Prefers the closest sensor at or downstream of the gantry within
    /// [`SENSOR_SEARCH_RADIUS_MI`]; otherwise falls back to the nearest sensor.
    pub fn assign_critical_sensor(&self, gantry: &Gantry) -> Result<usize, ConfigError> {
        if self.sensors.is_empty() {
            return Err(ConfigError::NoSensors);
        }
        let g = self.position(gantry.milepost);
        let offsets = self.sensors.iter().map(|s| self.position(s.milepost) - g).enumerate();
        let downstream = offsets
            .clone()
            .filter(|&(_, d)| (-1e-9..=SENSOR_SEARCH_RADIUS_MI + 1e-9).contains(&d))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let pick = downstream.or_else(|| offsets.min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())));
        Ok(pick.map(|(i, _)| i).expect("sensors is non-empty"))
    }

    /// Critical sensor index for every gantry, in gantry order.
    pub fn critical_sensors(&self) -> Result<Vec<usize>, ConfigError> {
        self.gantries.iter().map(|g| self.assign_critical_sensor(g)).collect()
    }

    /// Upstream neighbour of the 1-based agent `index`; `None` for the most
    /// upstream gantry.
    pub fn upstream_neighbor(&self, index: usize) -> Result<Option<usize>, ConfigError> {
        let count = self.gantries.len();
        if index == 0 || index > count {
            return Err(ConfigError::GantryIndex { index, count });
        }
        Ok((index < count).then_some(index + 1))
    }

    /// Stable hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("corridor serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn travel_position(direction: Direction, origin: f64, milepost: f64) -> f64 {
    match direction {
        Direction::WB => origin - milepost,
        Direction::EB => milepost - origin,
    }
}

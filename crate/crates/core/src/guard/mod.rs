//! Safety layer between the policy and the gantries.

mod benchmark;
mod pipeline;
mod rules;
mod window;

pub use benchmark::RuleBasedController;
pub use pipeline::{
    decide, degraded_decisions, fallback_decisions, Attribution, Controller, Decision, FixedMaxController,
    GuardPipeline, MarlController, TickOutput,
};
pub use rules::{debounce, enforce_step_down, max_limit_correct, round_up_ten, speed_match, MatchBounds};
pub use window::{preprocess, Preprocessed, Preprocessor, SensorWindow, WINDOW_S};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Occupancy at or above which a maximum posting is speed-matched.
    pub o_thred: f64,
    /// How long a silent sensor may hold its last window.
    pub staleness_limit_s: f64,
    /// Re-apply the step-down rule after maximum-limit correction.
    pub strict_step_down: bool,
    pub speed_matching: bool,
    pub debounce: bool,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            o_thred: 0.10,
            staleness_limit_s: 300.0,
            strict_step_down: false,
            speed_matching: true,
            debounce: true,
        }
    }
}

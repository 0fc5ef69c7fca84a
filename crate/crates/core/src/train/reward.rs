//! Per-agent reward surrogates.

use serde::{Deserialize, Serialize};

use crate::corridor::SpeedLimit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Defaults to 2 so a congested head agent strictly prefers the minimum
    /// limit over one step above it when the downstream agent is free.
    pub w_a: f64,
    pub w_s: f64,
    pub w_m: f64,
    /// Occupancy at or above which the agent's segment counts as congested.
    pub o_cong: f64,
    /// Occupancy at or below which it counts as free-flowing.
    pub o_free: f64,
    pub max_limit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { w_a: 2.0, w_s: 1.0, w_m: 0.5, o_cong: 0.25, o_free: 0.12, max_limit: 70.0 }
    }
}

/// Reward components `(r_a, r_s, r_m)` for posting `a` below `a_down` with
/// resulting occupancy `o`.
pub fn components(cfg: &RewardConfig, a: SpeedLimit, a_down: SpeedLimit, o: f64) -> (f64, f64, f64) {
    let a = a.as_f64();
    let down = a_down.as_f64();
    let r_a = if o >= cfg.o_cong { -a / cfg.max_limit } else { 0.0 };
    let r_s = -(a - down - 10.0).max(0.0) / 40.0 - (a - down).abs() / 80.0;
    let r_m = if o <= cfg.o_free { a / cfg.max_limit } else { 0.0 };
    (r_a, r_s, r_m)
}

pub fn agent_reward(cfg: &RewardConfig, a: SpeedLimit, a_down: SpeedLimit, o: f64) -> f64 {
    let (r_a, r_s, r_m) = components(cfg, a, a_down, o);
    cfg.w_a * r_a + cfg.w_s * r_s + cfg.w_m * r_m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn congestion_penalises_high_limits() {
        let c = RewardConfig::default();
        let hi = agent_reward(&c, SpeedLimit(70), SpeedLimit(70), 0.5);
        let lo = agent_reward(&c, SpeedLimit(30), SpeedLimit(30), 0.5);
        assert!(lo > hi);
        assert!((hi + c.w_a).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_components() {
        let c = RewardConfig { w_a: 1.0, ..RewardConfig::default() };
        let (a, s, m) = components(&c, SpeedLimit(70), SpeedLimit(30), 0.5);
        assert_eq!((a, m), (-1.0, 0.0));
        assert!((s + 1.25).abs() < 1e-12);
        assert!((agent_reward(&c, SpeedLimit(30), SpeedLimit(30), 0.5) + 30.0 / 70.0).abs() < 1e-12);
        assert!((agent_reward(&c, SpeedLimit(70), SpeedLimit(70), 0.05) - c.w_m).abs() < 1e-12);
    }

    #[test]
    fn free_flow_rewards_maximum() {
        let c = RewardConfig::default();
        assert!((agent_reward(&c, SpeedLimit(70), SpeedLimit(70), 0.05) - 0.5).abs() < 1e-12);
        assert!(agent_reward(&c, SpeedLimit(60), SpeedLimit(70), 0.05) < 0.5);
    }

    #[test]
    fn smoothness_terms() {
        let c = RewardConfig::default();
        let (_, s, _) = components(&c, SpeedLimit(70), SpeedLimit(40), 0.2);
        assert!((s - (-20.0 / 40.0 - 30.0 / 80.0)).abs() < 1e-12);
    }
}

//! Episode collection for training and evaluation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::TrainingEnv;
use super::reward::{agent_reward, RewardConfig};
use crate::corridor::SpeedLimit;
use crate::error::TrainError;
use crate::policy::{act, action_mask, build_observation, NormBounds, PolicyParameters, Selection, TrafficState};
use crate::scalar::Scalar;

/// How each agent picks its action.
#[derive(Debug, Clone, Copy)]
pub enum Behaviour<'a, T> {
    /// Seeded sampling from the masked policy (training).
    Sample(&'a PolicyParameters<T>),
    /// Deterministic argmax (deployment).
    Argmax(&'a PolicyParameters<T>),
    /// Uniform over the valid actions.
    UniformRandom,
    /// A constant limit, lowered to the step-down bound when needed.
    Fixed(SpeedLimit),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep<T> {
    pub features: [T; 5],
    pub mask: Vec<bool>,
    pub action: usize,
    pub log_prob: T,
    pub limit: SpeedLimit,
    pub a_down: SpeedLimit,
    pub state: TrafficState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    /// Most downstream first.
    pub agents: Vec<AgentStep<T>>,
    pub rewards: Vec<f64>,
}

impl<T: Scalar> StepRecord<T> {
    pub fn critic_input(&self) -> Vec<T> {
        self.agents.iter().flat_map(|a| a.features).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub seed: u64,
    pub steps: Vec<StepRecord<T>>,
    /// Critic input after the last step, used for bootstrapping.
    pub final_input: Vec<T>,
}

impl<T: Scalar> Episode<T> {
    /// Sum of every agent's reward over the episode.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().flat_map(|s| &s.rewards).sum()
    }
}

struct Sweep<T> {
    agents: Vec<AgentStep<T>>,
    limits: Vec<SpeedLimit>,
}

fn sweep<T: Scalar>(
    states: &[TrafficState],
    behaviour: &Behaviour<'_, T>,
    action_set: &[SpeedLimit],
    a_diff: u16,
    top: SpeedLimit,
    bounds: &NormBounds,
    rng: &mut dyn RngCore,
) -> Result<Sweep<T>, TrainError> {
    let mut agents = Vec::with_capacity(states.len());
    let mut a_down = top;
    for (i, &own) in states.iter().enumerate() {
        let upstream = states.get(i + 1).copied().unwrap_or(own);
        let obs = build_observation::<T>(own, upstream, a_down, bounds);
        let mask = action_mask(action_set, a_down, a_diff);
        let (index, log_prob) = match behaviour {
            Behaviour::Sample(p) => {
                let o = act(p, &obs, mask.clone(), &mut Selection::Sample(rng))?;
                (o.index, o.log_prob)
            }
            Behaviour::Argmax(p) => {
                let o = act(p, &obs, mask.clone(), &mut Selection::Argmax)?;
                (o.index, o.log_prob)
            }
            Behaviour::UniformRandom => {
                let valid: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
                let pick = valid[rng.random_range(0..valid.len())];
                (pick, T::of(-(valid.len() as f64).ln()))
            }
            Behaviour::Fixed(limit) => {
                let bound = SpeedLimit(a_down.0 + a_diff);
                let target = (*limit).min(bound);
                let pick = (0..action_set.len()).rev().find(|&j| mask[j] && action_set[j] <= target).unwrap_or(0);
                (pick, T::zero())
            }
        };
        let limit = action_set[index];
        agents.push(AgentStep { features: obs.features, mask, action: index, log_prob, limit, a_down, state: own });
        a_down = limit;
    }
    let limits = agents.iter().map(|a| a.limit).collect();
    Ok(Sweep { agents, limits })
}

/// Runs one episode of `env` to completion.
pub fn run_episode<T: Scalar>(
    mut env: TrainingEnv,
    behaviour: Behaviour<'_, T>,
    seed: u64,
    reward: &RewardConfig,
) -> Result<Episode<T>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (action_set, a_diff, top) =
        (env.corridor.action_set.clone(), env.corridor.a_diff, env.corridor.max_limit_default);
    let bounds = match behaviour {
        Behaviour::Sample(p) | Behaviour::Argmax(p) => p.bounds,
        _ => NormBounds::default(),
    };
    let mut steps = Vec::with_capacity(env.steps());
    while !env.done() {
        let s = sweep::<T>(env.states(), &behaviour, &action_set, a_diff, top, &bounds, &mut rng)?;
        let next = env.step(&s.limits)?;
        let rewards =
            s.agents.iter().zip(next).map(|(a, n)| agent_reward(reward, a.limit, a.a_down, n.occupancy)).collect();
        steps.push(StepRecord { agents: s.agents, rewards });
    }
    let last = sweep::<T>(env.states(), &Behaviour::Fixed(top), &action_set, a_diff, top, &bounds, &mut rng)?;
    let final_input = last.agents.iter().flat_map(|a| a.features).collect();
    Ok(Episode { seed, steps, final_input })
}

/// Behavioural summary of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    pub total_reward: f64,
    /// Agent-steps where the agent and everything downstream is free-flowing.
    pub free_flow_steps: usize,
    pub free_flow_at_max: usize,
    /// Steps with at least one congested agent.
    pub congested_steps: usize,
    /// Of those, steps where the most upstream congested agent posts below the maximum.
    pub tail_below_max: usize,
}

impl EpisodeStats {
    pub fn of<T: Scalar>(ep: &Episode<T>, reward: &RewardConfig, top: SpeedLimit) -> Self {
        let mut st = EpisodeStats { total_reward: ep.total_reward(), ..Default::default() };
        for step in &ep.steps {
            let mut clear_downstream = true;
            for a in &step.agents {
                clear_downstream &= a.state.occupancy <= reward.o_free;
                if clear_downstream {
                    st.free_flow_steps += 1;
                    st.free_flow_at_max += usize::from(a.limit == top);
                }
            }
            if let Some(tail) = step.agents.iter().rposition(|a| a.state.occupancy >= reward.o_cong) {
                st.congested_steps += 1;
                st.tail_below_max += usize::from(step.agents[tail].limit < top);
            }
        }
        st
    }

    pub fn merge(&mut self, other: &EpisodeStats) {
        self.total_reward += other.total_reward;
        self.free_flow_steps += other.free_flow_steps;
        self.free_flow_at_max += other.free_flow_at_max;
        self.congested_steps += other.congested_steps;
        self.tail_below_max += other.tail_below_max;
    }

    pub fn free_flow_rate(&self) -> f64 {
        self.free_flow_at_max as f64 / self.free_flow_steps.max(1) as f64
    }

    pub fn tail_rate(&self) -> f64 {
        self.tail_below_max as f64 / self.congested_steps.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::invalid_actions;

    fn short_env(seed: u64) -> TrainingEnv {
        let (c, mut s) = super::super::env::episode_scenario(seed);
        s.duration_s = 900.0;
        TrainingEnv::new(c, s).unwrap()
    }

    #[test]
    fn random_actions_respect_mask() {
        let ep = run_episode::<f64>(short_env(1), Behaviour::UniformRandom, 7, &RewardConfig::default()).unwrap();
        assert_eq!(ep.steps.len(), 30);
        for s in &ep.steps {
            for a in &s.agents {
                assert!(!invalid_actions(&[30, 40, 50, 60, 70].map(SpeedLimit), a.a_down, 10).contains(&a.limit));
            }
        }
    }

    #[test]
    fn fixed_max_posts_max_everywhere() {
        let ep =
            run_episode::<f64>(short_env(2), Behaviour::Fixed(SpeedLimit(70)), 0, &RewardConfig::default()).unwrap();
        assert!(ep.steps.iter().all(|s| s.agents.iter().all(|a| a.limit == SpeedLimit(70))));
        let st = EpisodeStats::of(&ep, &RewardConfig::default(), SpeedLimit(70));
        assert_eq!(st.free_flow_rate(), 1.0);
    }

    #[test]
    fn sampled_episode_is_reproducible() {
        let p = PolicyParameters::<f64>::init(&[8, 8], &mut ChaCha8Rng::seed_from_u64(0));
        let a = run_episode(short_env(3), Behaviour::Sample(&p), 5, &RewardConfig::default()).unwrap();
        let b = run_episode(short_env(3), Behaviour::Sample(&p), 5, &RewardConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}

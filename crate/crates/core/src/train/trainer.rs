//! Multi-agent PPO with a shared actor and a centralised critic.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::TrainingEnv;
use super::gae::{gae, normalize};
use super::ppo::{actor_loss_grad, critic_loss_grad, ActorSample, CriticSample};
use super::reward::RewardConfig;
use super::rollout::{run_episode, Behaviour, Episode, EpisodeStats};
use crate::corridor::SpeedLimit;
use crate::error::TrainError;
use crate::policy::{Adam, Mlp, PolicyParameters};
use crate::scalar::Scalar;

/// Seeds at or above this value are never used for training rollouts.
pub const VALIDATION_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub validation_episodes: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 40,
            episodes_per_iteration: 8,
            epochs: 4,
            minibatch: 1024,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            validation_episodes: 3,
            eval_every: 5,
            seed: 0,
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_episode_reward: f64,
    pub validation_reward: Option<f64>,
    pub entropy: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation reward.
    pub policy: PolicyParameters<T>,
    pub best_iteration: usize,
    pub best_validation_reward: f64,
    pub curve: Vec<CurvePoint>,
}

/// Writes the learning curve as CSV.
pub fn write_curve_csv(curve: &[CurvePoint], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,mean_episode_reward,validation_reward,entropy,actor_loss,critic_loss,clip_fraction")?;
    for p in curve {
        let val = p.validation_reward.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            p.iteration, p.mean_episode_reward, val, p.entropy, p.actor_loss, p.critic_loss, p.clip_fraction
        )?;
    }
    Ok(())
}

/// Runs `seeds` in parallel; results keep the seed order.
pub fn collect<T: Scalar>(
    behaviour: Behaviour<'_, T>,
    seeds: &[u64],
    reward: &RewardConfig,
) -> Result<Vec<Episode<T>>, TrainError> {
    seeds
        .par_iter()
        .map(|&s| run_episode(TrainingEnv::episode(s)?, behaviour, s.wrapping_mul(0x9E37_79B9_7F4A_7C15), reward))
        .collect()
}

/// Aggregate statistics of `behaviour` over `seeds`, one entry per seed.
pub fn evaluate<T: Scalar>(
    behaviour: Behaviour<'_, T>,
    seeds: &[u64],
    reward: &RewardConfig,
) -> Result<Vec<EpisodeStats>, TrainError> {
    Ok(collect(behaviour, seeds, reward)?.iter().map(|ep| EpisodeStats::of(ep, reward, SpeedLimit(70))).collect())
}

fn clip_norm<T: Scalar>(g: &mut Mlp<T>, max: f64) {
    let norm = g.norm().f64();
    if norm > max && norm > 0.0 {
        g.scale(T::of(max / norm));
    }
}

fn parallel_grad<T: Scalar, S: Sync, F>(net: &Mlp<T>, batch: &[&S], f: F) -> Mlp<T>
where
    F: Fn(&[S]) -> Mlp<T> + Sync,
    S: Clone,
{
    let parts: Vec<Mlp<T>> = batch
        .par_chunks(128)
        .map(|chunk| {
            let owned: Vec<S> = chunk.iter().map(|s| (*s).clone()).collect();
            let mut g = f(&owned);
            // each chunk returns a mean; reweight to the whole batch
            g.scale(T::of(owned.len() as f64 / batch.len() as f64));
            g
        })
        .collect();
    let mut total = net.zeros_like();
    for p in &parts {
        total.add_assign(p);
    }
    total
}

/// Trains a policy from scratch.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<TrainOutcome<T>, TrainError> {
    train_with_progress(cfg, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    cfg: &TrainConfig,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome<T>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = PolicyParameters::<T>::init(&cfg.hidden, &mut rng);
    let n_agents = crate::sim::training_corridor().n_gantries();
    let mut critic_sizes = vec![5 * n_agents];
    critic_sizes.extend(&cfg.critic_hidden);
    critic_sizes.push(n_agents);
    let mut critic = Mlp::<T>::new(&critic_sizes, 1.0, &mut rng);
    let mut actor_opt = Adam::<T>::new(policy.actor.n_params(), cfg.actor_lr);
    let mut critic_opt = Adam::<T>::new(critic.n_params(), cfg.critic_lr);
    let (gamma, lambda, clip, ent) = (T::of(cfg.gamma), T::of(cfg.lambda), T::of(cfg.clip), T::of(cfg.entropy_coef));
    let validation: Vec<u64> = (0..cfg.validation_episodes as u64).map(|k| VALIDATION_SEED_BASE + k).collect();

    let mut best = (f64::NEG_INFINITY, 0usize, policy.clone());
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let seeds: Vec<u64> = (0..cfg.episodes_per_iteration as u64)
            .map(|e| cfg.seed.wrapping_mul(1_000_003) + (it * cfg.episodes_per_iteration) as u64 + e)
            .map(|s| s % VALIDATION_SEED_BASE)
            .collect();
        let episodes = collect(Behaviour::Sample(&policy), &seeds, &cfg.reward)?;
        let mean_reward = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;

        let mut actor_batch = Vec::new();
        let mut critic_batch = Vec::new();
        for ep in &episodes {
            let inputs: Vec<Vec<T>> = ep.steps.iter().map(|s| s.critic_input()).collect();
            let values: Vec<Vec<T>> = inputs.iter().map(|x| critic.forward(x)).collect();
            let boot = critic.forward(&ep.final_input);
            let mut adv = vec![Vec::new(); n_agents];
            let mut ret = vec![Vec::new(); n_agents];
            for a in 0..n_agents {
                let r: Vec<T> = ep.steps.iter().map(|s| T::of(s.rewards[a])).collect();
                let v: Vec<T> = values.iter().map(|v| v[a]).collect();
                let (ad, re) = gae(&r, &v, boot[a], gamma, lambda);
                adv[a] = ad;
                ret[a] = re;
            }
            for (t, step) in ep.steps.iter().enumerate() {
                for (a, ag) in step.agents.iter().enumerate() {
                    actor_batch.push(ActorSample {
                        features: ag.features,
                        mask: ag.mask.clone(),
                        action: ag.action,
                        old_log_prob: ag.log_prob,
                        advantage: adv[a][t],
                    });
                }
                critic_batch.push(CriticSample {
                    input: inputs[t].clone(),
                    returns: (0..n_agents).map(|a| ret[a][t]).collect(),
                });
            }
        }
        if actor_batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut advs: Vec<T> = actor_batch.iter().map(|s| s.advantage).collect();
        normalize(&mut advs);
        actor_batch.iter_mut().zip(advs).for_each(|(s, a)| s.advantage = a);

        let (mut entropy, mut a_loss, mut c_loss, mut clip_frac, mut updates) = (0.0, 0.0, 0.0, 0.0, 0usize);
        let critic_mb = (cfg.minibatch / n_agents).max(1);
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..actor_batch.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch.max(1)) {
                let mb: Vec<&ActorSample<T>> = chunk.iter().map(|&i| &actor_batch[i]).collect();
                let mut stats_acc = (0.0, 0.0, 0.0);
                let mut g = parallel_grad(&policy.actor, &mb, |part| {
                    let (_, g, _) = actor_loss_grad(&policy.actor, part, clip, ent);
                    g
                });
                let owned: Vec<ActorSample<T>> = mb.iter().take(256).map(|s| (*s).clone()).collect();
                let (_, _, st) = actor_loss_grad(&policy.actor, &owned, clip, ent);
                stats_acc.0 += st.entropy;
                stats_acc.1 += st.loss;
                stats_acc.2 += st.clip_fraction;
                if !g.is_finite() {
                    continue;
                }
                clip_norm(&mut g, cfg.max_grad_norm);
                actor_opt.step(&mut policy.actor, &g);
                entropy += stats_acc.0;
                a_loss += stats_acc.1;
                clip_frac += stats_acc.2;
                updates += 1;
            }
            let mut corder: Vec<usize> = (0..critic_batch.len()).collect();
            corder.shuffle(&mut rng);
            for chunk in corder.chunks(critic_mb) {
                let mb: Vec<&CriticSample<T>> = chunk.iter().map(|&i| &critic_batch[i]).collect();
                let mut g = parallel_grad(&critic, &mb, |part| critic_loss_grad(&critic, part).1);
                let owned: Vec<CriticSample<T>> = mb.iter().take(64).map(|s| (*s).clone()).collect();
                c_loss += critic_loss_grad(&critic, &owned).0.f64();
                if !g.is_finite() {
                    continue;
                }
                clip_norm(&mut g, cfg.max_grad_norm * 10.0);
                critic_opt.step(&mut critic, &g);
            }
        }
        let critic_updates = (cfg.epochs * critic_batch.len().div_ceil(critic_mb)).max(1) as f64;
        let u = updates.max(1) as f64;

        let last = it + 1 == cfg.iterations;
        let validation_reward = if cfg.eval_every > 0 && ((it + 1) % cfg.eval_every == 0 || last) {
            let stats = evaluate(Behaviour::Argmax(&policy), &validation, &cfg.reward)?;
            let v = stats.iter().map(|s| s.total_reward).sum::<f64>() / stats.len().max(1) as f64;
            if v > best.0 {
                best = (v, it, policy.clone());
            }
            Some(v)
        } else {
            None
        };
        let point = CurvePoint {
            iteration: it,
            mean_episode_reward: mean_reward,
            validation_reward,
            entropy: entropy / u,
            actor_loss: a_loss / u,
            critic_loss: c_loss / critic_updates,
            clip_fraction: clip_frac / u,
        };
        progress(&point);
        curve.push(point);
    }
    let (best_validation_reward, best_iteration, mut policy) =
        if best.0.is_finite() { best } else { (f64::NAN, cfg.iterations, policy) };
    policy.metadata = serde_json::json!({
        "trainer": "mappo",
        "best_iteration": best_iteration,
        "best_validation_reward": best_validation_reward,
        "config": cfg,
    })
    .to_string();
    Ok(TrainOutcome { policy, best_iteration, best_validation_reward, curve })
}

//! Clipped-surrogate actor loss and centralised critic loss with their
//! analytic gradients.

use crate::policy::{MaskedDistribution, Mlp};
use crate::scalar::Scalar;

/// One agent-step used for the actor update.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample<T> {
    pub features: [T; 5],
    pub mask: Vec<bool>,
    pub action: usize,
    pub old_log_prob: T,
    pub advantage: T,
}

/// One time step used for the critic update.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSample<T> {
    /// Concatenated observations of every agent.
    pub input: Vec<T>,
    /// Per-agent return targets.
    pub returns: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats {
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Mean over `batch` of `−min(r·A, clip(r, 1−ε, 1+ε)·A) − c·H`.
pub fn actor_loss<T: Scalar>(actor: &Mlp<T>, batch: &[ActorSample<T>], clip: T, entropy_coef: T) -> T {
    let n = T::of(batch.len() as f64);
    batch
        .iter()
        .map(|s| {
            let dist = MaskedDistribution::new(actor.forward(&s.features), s.mask.clone()).expect("valid mask");
            let ratio = (dist.log_prob(s.action) - s.old_log_prob).exp();
            let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
            -(ratio * s.advantage).min(clipped * s.advantage) - entropy_coef * dist.entropy()
        })
        .sum::<T>()
        / n
}

/// Loss, gradient with respect to the actor parameters, and statistics.
pub fn actor_loss_grad<T: Scalar>(
    actor: &Mlp<T>,
    batch: &[ActorSample<T>],
    clip: T,
    entropy_coef: T,
) -> (T, Mlp<T>, ActorStats) {
    let mut grads = actor.zeros_like();
    let n = T::of(batch.len() as f64);
    let mut loss = T::zero();
    let mut entropy = 0.0;
    let mut clipped_count = 0usize;
    for s in batch {
        let trace = actor.trace(&s.features);
        let dist = MaskedDistribution::new(trace.output().to_vec(), s.mask.clone()).expect("valid mask");
        let ratio = (dist.log_prob(s.action) - s.old_log_prob).exp();
        let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
        let h = dist.entropy();
        loss = loss - (ratio * s.advantage).min(clipped * s.advantage) - entropy_coef * h;
        entropy += h.f64();
        // the unclipped branch carries gradient when it is the smaller one
        let active = ratio * s.advantage <= clipped * s.advantage;
        if !active {
            clipped_count += 1;
        }
        let d_logp = if active { -s.advantage * ratio } else { T::zero() };
        let grad_out: Vec<T> = (0..dist.probs.len())
            .map(|j| {
                if !dist.valid[j] {
                    return T::zero();
                }
                let p = dist.probs[j];
                let onehot = if j == s.action { T::one() } else { T::zero() };
                let d_ent = if p > T::zero() { -p * (dist.log_prob(j) + h) } else { T::zero() };
                (d_logp * (onehot - p) - entropy_coef * d_ent) / n
            })
            .collect();
        actor.backward(&trace, &grad_out, &mut grads);
    }
    let count = batch.len().max(1) as f64;
    let stats =
        ActorStats { loss: (loss / n).f64(), entropy: entropy / count, clip_fraction: clipped_count as f64 / count };
    (loss / n, grads, stats)
}

/// Mean over samples of `½·Σ_agents (V − R)² / agents`.
pub fn critic_loss_grad<T: Scalar>(critic: &Mlp<T>, batch: &[CriticSample<T>]) -> (T, Mlp<T>) {
    let mut grads = critic.zeros_like();
    let n = T::of(batch.len() as f64);
    let mut loss = T::zero();
    for s in batch {
        let trace = critic.trace(&s.input);
        let k = T::of(s.returns.len() as f64);
        let grad_out: Vec<T> = trace
            .output()
            .iter()
            .zip(&s.returns)
            .map(|(v, r)| {
                let e = *v - *r;
                loss = loss + T::of(0.5) * e * e / k;
                e / (k * n)
            })
            .collect();
        critic.backward(&trace, &grad_out, &mut grads);
    }
    (loss / n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let critic = Mlp::<f64>::new(&[6, 5, 3], 1.0, &mut rng);
        let batch: Vec<CriticSample<f64>> = (0..4)
            .map(|_| CriticSample {
                input: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                returns: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let (_, g) = critic_loss_grad(&critic, &batch);
        let flat = critic.flat();
        let analytic = g.flat();
        for i in 0..flat.len() {
            let h = 1e-6;
            let mut plus = critic.clone();
            let mut p = flat.clone();
            p[i] += h;
            plus.set_flat(&p);
            let mut minus = critic.clone();
            p[i] -= 2.0 * h;
            minus.set_flat(&p);
            let fd = (critic_loss_grad(&plus, &batch).0 - critic_loss_grad(&minus, &batch).0) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-7, "{i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn loss_functions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Mlp::<f64>::new(&[5, 8, 5], 1.0, &mut rng);
        let batch = vec![ActorSample {
            features: [0.1, 0.2, 0.3, 0.4, 0.5],
            mask: vec![true, true, false, true, true],
            action: 1,
            old_log_prob: -1.2,
            advantage: 0.7,
        }];
        let (l, _, _) = actor_loss_grad(&actor, &batch, 0.2, 0.01);
        assert!((l - actor_loss(&actor, &batch, 0.2, 0.01)).abs() < 1e-15);
    }
}

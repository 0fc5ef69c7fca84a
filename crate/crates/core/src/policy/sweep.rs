//! Downstream-to-upstream decision sweep.

use super::masking::{action_mask, MaskedDistribution, Selection};
use super::observation::{build_observation, Observation, TrafficState};
use super::params::PolicyParameters;
use crate::corridor::SpeedLimit;
use crate::error::PolicyError;
use crate::scalar::Scalar;

/// Result of evaluating the policy for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutcome<T> {
    pub index: usize,
    pub action: SpeedLimit,
    pub log_prob: T,
    pub distribution: MaskedDistribution<T>,
}

/// Evaluates the actor on `obs` under `mask` and selects an action.
pub fn act<T: Scalar>(
    params: &PolicyParameters<T>,
    obs: &Observation<T>,
    mask: Vec<bool>,
    selection: &mut Selection<'_>,
) -> Result<ActOutcome<T>, PolicyError> {
    let distribution = MaskedDistribution::new(params.logits(&obs.features), mask)?;
    let index = match selection {
        Selection::Argmax => distribution.argmax(),
        Selection::Sample(rng) => distribution.sample(&mut **rng),
    };
    if !distribution.valid[index] {
        return Err(PolicyError::AllMasked);
    }
    Ok(ActOutcome { index, action: params.action_set[index], log_prob: distribution.log_prob(index), distribution })
}

/// One agent's step of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStep<T> {
    pub obs: Observation<T>,
    pub a_down: SpeedLimit,
    pub mask: Vec<bool>,
    pub index: usize,
    /// Policy output after masking.
    pub action: SpeedLimit,
    pub log_prob: T,
    /// Value handed upstream as the next agent's `a_down`.
    pub intended: SpeedLimit,
}

/// Runs agents 1..n (most downstream first). `states[i]` is agent `i`'s
/// sensor state; the most upstream agent reuses its own state as the
/// upstream feature. `adjust` maps each raw action to the intended limit
/// passed upstream (identity during training, speed matching in deployment).
pub fn sequential_sweep<T, F>(
    params: &PolicyParameters<T>,
    states: &[TrafficState],
    selection: &mut Selection<'_>,
    mut adjust: F,
) -> Result<Vec<SweepStep<T>>, PolicyError>
where
    T: Scalar,
    F: FnMut(usize, SpeedLimit, SpeedLimit, TrafficState) -> SpeedLimit,
{
    let mut out = Vec::with_capacity(states.len());
    let mut a_down = params.max_limit_default;
    for (i, &own) in states.iter().enumerate() {
        let upstream = states.get(i + 1).copied().unwrap_or(own);
        let obs = build_observation(own, upstream, a_down, &params.bounds);
        let mask = action_mask(&params.action_set, a_down, params.a_diff);
        let outcome = act(params, &obs, mask.clone(), selection)?;
        let intended = adjust(i, outcome.action, a_down, own);
        out.push(SweepStep {
            obs,
            a_down,
            mask,
            index: outcome.index,
            action: outcome.action,
            log_prob: outcome.log_prob,
            intended,
        });
        a_down = intended;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::masking::invalid_actions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> PolicyParameters<f64> {
        let mut p = PolicyParameters::init(&[16, 16], &mut ChaCha8Rng::seed_from_u64(seed));
        // large head so argmax preferences vary with the input
        p.actor.layers.last_mut().unwrap().weights.iter_mut().for_each(|w| *w *= 300.0);
        p
    }

    #[test]
    fn single_agent_uses_default_downstream_action() {
        let p = params(1);
        let steps = sequential_sweep(
            &p,
            &[TrafficState { speed: 65.0, occupancy: 0.1 }],
            &mut Selection::Argmax,
            |_, a, _, _| a,
        )
        .unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].a_down, SpeedLimit(70));
        assert_eq!(steps[0].obs.features[4], 1.0);
    }

    #[test]
    fn seeded_sampling_replays_identically() {
        let p = params(4);
        let states: Vec<TrafficState> =
            (0..8).map(|i| TrafficState { speed: 10.0 * i as f64, occupancy: 0.1 * i as f64 }).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sequential_sweep(&p, &states, &mut Selection::Sample(&mut rng), |_, a, _, _| a)
                .unwrap()
                .iter()
                .map(|s| s.action)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    proptest::proptest! {
        #[test]
        fn sweep_respects_step_down(seed in 0u64..500, n in 1usize..12, sample in proptest::bool::ANY) {
            let p = params(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let states: Vec<TrafficState> = (0..n)
                .map(|_| TrafficState { speed: rng.random_range(0.0..80.0), occupancy: rng.random_range(0.0..1.0) })
                .collect();
            let mut draw = ChaCha8Rng::seed_from_u64(seed);
            let mut sel = if sample { Selection::Sample(&mut draw) } else { Selection::Argmax };
            let steps = sequential_sweep(&p, &states, &mut sel, |_, a, _, _| a).unwrap();
            for (i, s) in steps.iter().enumerate() {
                proptest::prop_assert!(!invalid_actions(&p.action_set, s.a_down, 10).contains(&s.action));
                if i > 0 {
                    proptest::prop_assert!(s.action.0 <= steps[i - 1].action.0 + 10);
                }
            }
        }
    }
}

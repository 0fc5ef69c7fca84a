//! Invalid-action masking over the discrete speed-limit action set.

use rand::{Rng, RngCore};

use crate::corridor::SpeedLimit;
use crate::error::PolicyError;
use crate::scalar::Scalar;

/// Actions that would step down by more than `a_diff` from the downstream
/// agent's intended limit: `{ a : a > a_down + a_diff }`.
pub fn invalid_actions(action_set: &[SpeedLimit], a_down: SpeedLimit, a_diff: u16) -> Vec<SpeedLimit> {
    action_set.iter().copied().filter(|a| a.0 > a_down.0 + a_diff).collect()
}

/// `true` where the action is allowed.
pub fn action_mask(action_set: &[SpeedLimit], a_down: SpeedLimit, a_diff: u16) -> Vec<bool> {
    action_set.iter().map(|a| a.0 <= a_down.0 + a_diff).collect()
}

/// Categorical distribution over actions with invalid entries forced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDistribution<T> {
    pub logits: Vec<T>,
    pub valid: Vec<bool>,
    pub probs: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Scalar> MaskedDistribution<T> {
    /// Softmax with masked logits replaced by −∞.
    pub fn new(logits: Vec<T>, valid: Vec<bool>) -> Result<Self, PolicyError> {
        assert_eq!(logits.len(), valid.len());
        let max = logits.iter().zip(&valid).filter(|(_, &v)| v).map(|(l, _)| *l).fold(T::neg_infinity(), T::max);
        if !max.is_finite() {
            return Err(PolicyError::AllMasked);
        }
        let shifted: Vec<T> =
            logits.iter().zip(&valid).map(|(l, &v)| if v { *l - max } else { T::neg_infinity() }).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<T>().ln();
        let log_probs: Vec<T> = shifted.iter().map(|s| *s - log_z).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(MaskedDistribution { logits, valid, probs, log_probs })
    }

    pub fn log_prob(&self, index: usize) -> T {
        self.log_probs[index]
    }

    pub fn entropy(&self) -> T {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|((p, lp), _)| -(*p * *lp))
            .sum()
    }

    /// Highest-probability valid action; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = None::<(usize, T)>;
        for (i, (&l, &v)) in self.logits.iter().zip(&self.valid).enumerate() {
            if v && best.is_none_or(|(_, b)| l > b) {
                best = Some((i, l));
            }
        }
        best.expect("constructed with at least one valid action").0
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, (p, &v)) in self.probs.iter().zip(&self.valid).enumerate() {
            if !v {
                continue;
            }
            last = i;
            acc += p.f64();
            if u < acc {
                return i;
            }
        }
        last
    }
}

/// How an action is drawn from the masked distribution.
pub enum Selection<'a> {
    Argmax,
    Sample(&'a mut dyn RngCore),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> Vec<SpeedLimit> {
        [30, 40, 50, 60, 70].map(SpeedLimit).to_vec()
    }

    #[test]
    fn invalid_set_examples() {
        assert_eq!(invalid_actions(&set(), SpeedLimit(50), 10), vec![SpeedLimit(70)]);
        assert_eq!(invalid_actions(&set(), SpeedLimit(30), 10), [50, 60, 70].map(SpeedLimit).to_vec());
        assert!(invalid_actions(&set(), SpeedLimit(70), 10).is_empty());
    }

    #[test]
    fn profile_examples_against_step_down_rule() {
        let ok = |p: &[u16]| p.windows(2).all(|w| w[1] + 10 >= w[0]);
        // listed facing downstream: each next gantry may drop at most 10
        assert!(ok(&[70, 60, 50]));
        assert!(!ok(&[70, 50, 30]));
    }

    #[test]
    fn lowest_action_is_never_masked() {
        for a_down in set() {
            assert!(action_mask(&set(), a_down, 10)[0]);
        }
    }

    #[test]
    fn uniform_logits_spread_over_valid_actions() {
        let d = MaskedDistribution::new(vec![0.0f64; 5], action_mask(&set(), SpeedLimit(50), 10)).unwrap();
        for p in &d.probs[..4] {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert_eq!(d.probs[4], 0.0);
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_skips_masked_favourite() {
        let d =
            MaskedDistribution::new(vec![0.1, 0.5, 0.3, 0.2, 9.0f64], action_mask(&set(), SpeedLimit(50), 10)).unwrap();
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn all_masked_is_a_fault() {
        assert!(matches!(MaskedDistribution::new(vec![0.0f64; 2], vec![false, false]), Err(PolicyError::AllMasked)));
    }

    #[test]
    fn sampling_is_reproducible_and_sound() {
        let d = MaskedDistribution::new(vec![0.3, -0.2, 0.8, 0.1, 2.0f64], action_mask(&set(), SpeedLimit(40), 10))
            .unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert!(draw(6).iter().all(|&i| i <= 2));
    }

    proptest::proptest! {
        #[test]
        fn masked_probabilities_normalize(logits in proptest::collection::vec(-20.0..20.0f64, 5), down in 0usize..5) {
            let d = MaskedDistribution::new(logits, action_mask(&set(), set()[down], 10)).unwrap();
            let total: f64 = d.probs.iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-9);
            for (p, v) in d.probs.iter().zip(&d.valid) {
                if !v { proptest::prop_assert_eq!(*p, 0.0); }
            }
        }
    }
}

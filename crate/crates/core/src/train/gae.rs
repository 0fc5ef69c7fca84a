//! Generalised advantage estimation.

use crate::scalar::Scalar;

/// Advantages and returns for one agent's trajectory. `bootstrap` is the
/// value estimate after the last step (zero for a true terminal).
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], bootstrap: T, gamma: T, lambda: T) -> (Vec<T>, Vec<T>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean, unit variance.
pub fn normalize<T: Scalar>(x: &mut [T]) {
    if x.is_empty() {
        return;
    }
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let sd = var.sqrt() + T::of(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

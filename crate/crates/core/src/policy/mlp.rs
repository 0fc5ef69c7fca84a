//! Small fully-connected network with tanh hidden layers and a linear head,
//! with hand-written backpropagation.

use rand::Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Activations recorded during a forward pass; `acts[0]` is the input and
/// `acts[k]` the (post-activation) output of layer `k-1`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl<T: Scalar> Mlp<T> {
    /// Uniform Glorot initialisation; the last layer is additionally scaled by
    /// `head_scale`.
    pub fn new(sizes: &[usize], head_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (i, o) = (w[0], w[1]);
                let limit = (6.0 / (i + o) as f64).sqrt() * if k + 1 == n { head_scale } else { 1.0 };
                let mut d = Dense::zeros(i, o);
                for x in &mut d.weights {
                    *x = T::of(rng.random_range(-limit..=limit));
                }
                d
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.trace(x).acts.pop().unwrap_or_default()
    }

    pub fn trace(&self, x: &[T]) -> Trace<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().expect("non-empty"), &mut out);
            if k != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &[T], grads: &mut Mlp<T>) {
        let mut delta = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.acts[k];
            let g = &mut grads.layers[k];
            for o in 0..layer.outputs {
                let d = delta[o];
                g.bias[o] = g.bias[o] + d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw = *gw + d * *xi;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![T::zero(); layer.inputs];
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p = *p + delta[o] * *w;
                }
            }
            // input of layer k is tanh output of layer k-1 (never the head)
            debug_assert!(k - 1 < last);
            for (p, a) in prev.iter_mut().zip(input) {
                *p = *p * (T::one() - *a * *a);
            }
            delta = prev;
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flat(&self) -> Vec<T> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.n_params());
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.params_mut().for_each(|p| *p = *p * factor);
    }

    pub fn add_assign(&mut self, other: &Mlp<T>) {
        for (p, q) in self.params_mut().zip(other.params()) {
            *p = *p + *q;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn norm(&self) -> T {
        self.params().map(|p| *p * *p).sum::<T>().sqrt()
    }
}

/// Adam optimiser state for one network.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Mlp<T>) {
        self.t += 1;
        let b1t = T::one() - self.beta1.powi(self.t);
        let b2t = T::one() - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in net.params_mut().zip(grads.params()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (T::one() - self.beta1) * *g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * *g * *g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p = *p - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp<f64>, x: &[f64], w: &[f64]) -> f64 {
        net.forward(x).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Mlp<f64> = Mlp::new(&[3, 4, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 0.9];
        let w = [1.5, -0.5];
        let mut grads = net.zeros_like();
        net.backward(&net.trace(&x), &w, &mut grads);
        let analytic = grads.flat();
        let base = net.flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = net.clone();
            let mut v = base.clone();
            v[i] += h;
            p.set_flat(&v);
            let up = loss(&p, &x, &w);
            v[i] -= 2.0 * h;
            p.set_flat(&v);
            let down = loss(&p, &x, &w);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-7, "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn f32_and_f64_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net: Mlp<f64> = Mlp::new(&[5, 8, 5], 1.0, &mut rng);
        let mut net32: Mlp<f32> = Mlp { layers: Vec::new() };
        for l in &net.layers {
            net32.layers.push(Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.iter().map(|&x| x as f32).collect(),
                bias: l.bias.iter().map(|&x| x as f32).collect(),
            });
        }
        let a = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let b = net32.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - f64::from(*y)).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net: Mlp<f64> = Mlp::new(&[1, 1], 1.0, &mut rng);
        let mut opt = Adam::new(net.n_params(), 0.05);
        for _ in 0..500 {
            // loss = (w - 2)^2 + (b + 1)^2
            let mut g = net.zeros_like();
            g.layers[0].weights[0] = 2.0 * (net.layers[0].weights[0] - 2.0);
            g.layers[0].bias[0] = 2.0 * (net.layers[0].bias[0] + 1.0);
            opt.step(&mut net, &g);
        }
        assert!((net.layers[0].weights[0] - 2.0).abs() < 1e-2);
        assert!((net.layers[0].bias[0] + 1.0).abs() < 1e-2);
    }
}

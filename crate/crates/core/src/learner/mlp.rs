//! Fully connected network with ReLU hidden layers and a linear output,
//! parameters stored in one flat vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("network shape mismatch: {left:?} vs {right:?}")]
pub struct ShapeMismatch {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations saved by a forward pass: the input followed by every layer's output.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Mlp {
        assert!(sizes.len() >= 2, "need input and output sizes");
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Fan-in uniform init for hidden layers; the output layer is drawn from
    /// `U(-final_scale, final_scale)`.
    pub fn new<R: Rng>(sizes: &[usize], final_scale: f64, rng: &mut R) -> Mlp {
        let mut net = Mlp::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers {
                final_scale
            } else {
                1.0 / (n_in as f64).sqrt()
            };
            for p in &mut net.params[off..off + n_in * n_out + n_out] {
                *p = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Sets the output layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.sizes.len();
        let (n_in, n_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let len = self.params.len();
        self.params[len - (n_in * n_out + n_out)..].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).acts.pop().unwrap()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(prev) {
                    s += wi * xi;
                }
                out.push(if l + 1 < layers { s.max(0.0) } else { s });
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Trace { acts }
    }

    /// Accumulates `d_out`-weighted parameter gradients into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let off = offsets[l];
            let prev = &trace.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let w = &self.params[off..off + n_in * n_out];
            let mut d_prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, x) in grow.iter_mut().zip(prev) {
                    *g += d * x;
                }
                let wrow = &w[o * n_in..(o + 1) * n_in];
                for (dp, wi) in d_prev.iter_mut().zip(wrow) {
                    *dp += d * wi;
                }
            }
            delta = d_prev;
        }
        delta
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), ShapeMismatch> {
    if target.sizes != online.sizes {
        return Err(ShapeMismatch {
            left: target.sizes.clone(),
            right: online.sizes.clone(),
        });
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Adam on a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let online = Mlp::new(&[3, 4, 2], 0.1, &mut rng);
        let mut target = Mlp::new(&[3, 4, 2], 0.1, &mut rng);
        let before = target.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, before);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());

        let mut t = Mlp::zeros(&[1, 1]);
        let mut o = Mlp::zeros(&[1, 1]);
        o.params_mut().iter_mut().for_each(|p| *p = 1.0);
        soft_update(&mut t, &o, 0.01).unwrap();
        assert!(t.params().iter().all(|p| (*p - 0.01).abs() < 1e-15));

        let mut wrong = Mlp::zeros(&[3, 5, 2]);
        assert!(soft_update(&mut wrong, &online, 0.5).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[4, 5, 3, 2], 0.5, &mut rng);
        let x = [0.3, -0.2, 0.8, 0.1];
        let w = [0.7, -1.3];
        let f = |n: &Mlp, x: &[f64]| n.forward(x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = vec![0.0; net.n_params()];
        let d_in = net.backward(&net.forward_trace(&x), &w, &mut grad);
        let h = 1e-6;
        for k in 0..net.n_params() {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let mut m = net.clone();
            m.params_mut()[k] -= h;
            let fd = (f(&p, &x) - f(&m, &x)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
            assert!((fd - d_in[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
        opt.step(&mut p, &[1.0, -1.0]);
        assert!(p[0] < 1.0 && p[1] > -2.0);
    }
}

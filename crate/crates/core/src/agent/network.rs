//! Fully connected Q-network over a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Action values are ordered `[SHORT, LONG]`.
pub const N_ACTIONS: usize = 2;

/// Layers are stored back to back; each is a row-major `out x in` weight
/// matrix followed by `out` biases. Hidden layers use ReLU and the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn q_values(&self) -> [f64; N_ACTIONS] {
        let out = self.acts.last().expect("trace has an output layer");
        [out[0], out[1]]
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    /// He-uniform weights for the ReLU layers, a narrower uniform for the
    /// output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(N_ACTIONS);
        let mut params = Vec::with_capacity(param_count(&sizes));
        let n_layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = if l + 1 == n_layers {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        QNetwork { sizes, params }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        if sizes.len() < 2 || sizes.last() != Some(&N_ACTIONS) || param_count(&sizes) != params.len() {
            return None;
        }
        Some(QNetwork { sizes, params })
    }

    /// Input, hidden and output widths.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.sizes, other.sizes, "network shapes differ");
        self.params.copy_from_slice(&other.params);
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &acts[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + dot(&w[o * n_in..(o + 1) * n_in], a))
                .collect();
            if l + 1 < n_layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
            off += n_in * n_out + n_out;
        }
        ForwardTrace { acts }
    }

    pub fn q_values(&self, x: &[f64]) -> [f64; N_ACTIONS] {
        self.forward_trace(x).q_values()
    }

    /// Adds `d(loss)/d(params)` into `grad`, given `d(loss)/d(q)` for the
    /// traced input.
    pub fn accumulate_gradient(&self, trace: &ForwardTrace, dq: [f64; N_ACTIONS], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dq.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &trace.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            // ReLU derivative, read off the stored post-activation.
            for (p, a) in prev.iter_mut().zip(a) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

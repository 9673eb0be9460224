//! Named parameter tensors, fan-in-scaled initialization, and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// One learnable tensor (a conv weight or bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// The full parameter vector of a network, in a fixed declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            data,
        });
        self.entries.len() - 1
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// FNV-1a over the little-endian parameter bytes; order-sensitive.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for v in &e.data {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradients matching a [`ParamSet`] entry-for-entry.
#[derive(Debug, Clone)]
pub struct GradSet {
    pub grads: Vec<Vec<f64>>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> GradSet {
        GradSet {
            grads: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            for v in g {
                *v *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Deterministic fan-in-scaled uniform initializer for a conv weight.
///
/// Bound `sqrt(6 / fan_in)`; biases are zero-initialized by the callers.
pub fn init_conv_weight(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize) -> Vec<f64> {
    let fan_in = (in_ch * 9) as f64;
    let bound = (6.0 / fan_in).sqrt();
    (0..out_ch * in_ch * 9)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

/// Seeds a parameter RNG; one stream per network initialization.
pub fn param_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
            v: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient in Adam step".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((entry, g), (m, v)) in params
            .entries
            .iter_mut()
            .zip(&grads.grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..entry.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                entry.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

use ndarray::Array2;

use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step also subtracts `lr · weight_decay · θ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Any non-finite gradient refuses the whole step
    /// and leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Array2<f64>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.dim() != self.m[i].dim() {
                return Err(Error::Contract(format!("gradient {i} has shape {:?}", g.dim())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::PoisonedUpdate(format!(
                    "non-finite gradient for `{}`",
                    store.name(store.ids().nth(i).unwrap())
                )));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
            });
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_grad_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

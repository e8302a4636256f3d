use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::nd::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.8, beta2: 0.9, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// First and second moments for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One decoupled-weight-decay update. Decay applies only to parameters
    /// flagged for it. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            bail!(Contract, "{} gradients for {} parameters", grads.len(), store.len());
        }
        for (p, g) in store.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                bail!(Shape, "gradient for `{}` has shape {:?}, expected {:?}", p.name, g.shape(), p.value.shape());
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.decay { 1.0 - lr * weight_decay } else { 1.0 };
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let (mh, vh) = (m.data()[i] / c1, v.data()[i] / c2);
                w[i] = w[i] * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

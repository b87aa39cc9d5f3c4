//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: step counter plus first/second moments mirroring the
/// parameter tensors in canonical order.
#[derive(Clone, Debug)]
pub struct AdamW<T: Element> {
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: &Parameters<T>) -> AdamW<T> {
        let zeros: Vec<Tensor<T>> =
            params.tensors().iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdamW { t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn from_state(t: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> AdamW<T> {
        AdamW { t, m, v }
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One decoupled-decay update:
    /// θ ← θ − lr·m̂/(√v̂+ε) − lr·wd·θ, with bias-corrected m̂ = m/(1−β₁ᵗ),
    /// v̂ = v/(1−β₂ᵗ). Moment math runs in f64 regardless of model precision.
    pub fn step(
        &mut self,
        params: &mut Parameters<T>,
        grads: &[Tensor<T>],
        config: &AdamWConfig,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - config.beta2.powi(self.t as i32);
        for (((name, theta), grad), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if theta.shape() != grad.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    grad.shape(),
                    theta.shape()
                )));
            }
            let td = theta.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = grad.data();
            for i in 0..td.len() {
                let g = gd[i].to_f64_();
                let mi = config.beta1 * md[i].to_f64_() + (1.0 - config.beta1) * g;
                let vi = config.beta2 * vd[i].to_f64_() + (1.0 - config.beta2) * g * g;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta_i = td[i].to_f64_();
                td[i] = T::from_f64(
                    theta_i
                        - config.learning_rate * (m_hat / (v_hat.sqrt() + config.epsilon))
                        - config.learning_rate * config.weight_decay * theta_i,
                );
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Element>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| {
            let x = v.to_f64_();
            x * x
        })
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

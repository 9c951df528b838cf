use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::autodiff::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay applied to every trainable tensor.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients held in `store`, which are then
    /// cleared. Fails without touching anything if a trainable parameter
    /// has no gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(TrainError::Invalid(
                "optimizer built for a different store".into(),
            ));
        }
        if let Some(p) = store.iter().find(|p| p.trainable && p.tensor.grad().is_none()) {
            return Err(TrainError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, wd, eps) = (T::of(c.lr), T::of(c.weight_decay), T::of(c.eps));
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                p.tensor.clear_grad();
                continue;
            }
            let g = p.tensor.take_grad().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.tensor.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let old = *theta;
                *theta = old - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * old;
            }
        }
        Ok(())
    }
}

//! Adam optimizer over a `ParamStore`.
//!
//! First and second moments are kept per parameter tensor, keyed by the same
//! names as the store, and updated in lexicographic name order so a training
//! run is bit-reproducible.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::num::{s, Scalar};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam<S> {
    cfg: AdamConfig,
    step_count: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update with learning rate `lr`, consuming the gradients
    /// currently in the store. Errors if no backward pass populated them.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        if !store.grads_populated() {
            return Err(CoreError::GradientsMissing);
        }
        self.step_count += 1;
        let t = self.step_count;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);

        let b1_s: S = s(b1);
        let b2_s: S = s(b2);
        let one_m_b1: S = s(1.0 - b1);
        let one_m_b2: S = s(1.0 - b2);
        let inv_bias1: S = s(1.0 / bias1);
        let inv_bias2: S = s(1.0 / bias2);
        let lr_s: S = s(lr);
        let eps: S = s(self.cfg.epsilon);

        let m_map = &mut self.m;
        let v_map = &mut self.v;
        store.for_each_pair_mut(|name, value, grad| {
            let m = m_map
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = v_map
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let vd = value.data_mut();
            let md = m.data_mut();
            let vvd = v.data_mut();
            for i in 0..vd.len() {
                let g = grad.data()[i];
                md[i] = b1_s * md[i] + one_m_b1 * g;
                vvd[i] = b2_s * vvd[i] + one_m_b2 * g * g;
                let m_hat = md[i] * inv_bias1;
                let v_hat = vvd[i] * inv_bias2;
                vd[i] = vd[i] - lr_s * m_hat / (v_hat.sqrt() + eps);
            }
        });
        store.mark_grads_consumed();
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        let n = params.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in params.ids() {
            if !params.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            if g.shape() != p.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> (ParamStore, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value));
        (s, id)
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut s, id) = one_param(0.0);
        let mut g = ParamGrads::default();
        g.set(id, Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s, &g).unwrap();
        let expected = -0.001 / (1.0 + 1e-7);
        assert!((s.get(id).item() - expected).abs() < 1e-15);
        assert!((s.get(id).item() + 0.0009999999).abs() < 1e-12);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = one_param(0.37);
        let mut g = ParamGrads::default();
        g.set(id, Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut s, &g).unwrap();
        }
        assert_eq!(s.get(id).item(), 0.37);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut s = ParamStore::new();
        let id = s.add_frozen("e", Tensor::scalar(1.0));
        let mut g = ParamGrads::default();
        g.set(id, Tensor::scalar(1.0));
        Adam::new(AdamConfig::default()).step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut s, id) = one_param(0.0);
        let mut g = ParamGrads::default();
        g.set(id, Tensor::zeros(&[2]));
        assert!(Adam::new(AdamConfig::default()).step(&mut s, &g).is_err());
    }
}

//! ADAM with bias correction.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient. A non-finite gradient rejects the whole
    /// update and leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(dim_err("gradient, state and parameter counts differ"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to the optimizer".into()));
        }
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(dim_err(format!(
                        "gradient shape mismatch for {}",
                        params.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in params.ids() {
            let i = id.index();
            let g = grads.get(id).map(Tensor::data);
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

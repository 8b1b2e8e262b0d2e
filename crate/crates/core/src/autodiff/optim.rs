//! Adam with bias correction, linear warmup and decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
            warmup_steps: 1000,
        }
    }
}

impl AdamConfig {
    /// Learning rate in effect at (1-based) step `step`.
    pub fn effective_lr(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step_count: usize,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn current_lr(&self) -> f64 {
        self.config.effective_lr(self.step_count)
    }

    /// Applies one update to every parameter. A parameter without a gradient
    /// buffer is an error unless `allow_missing` is set, in which case it is
    /// treated as having a zero gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &Gradients,
        allow_missing: bool,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        if !allow_missing {
            if let Some(id) = params.ids().find(|&id| grads.get(id).is_none()) {
                return Err(Error::MissingGradient(params.name(id).to_string()));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            ..
        } = self.config;
        let lr = self.config.effective_lr(self.step_count);
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.get_mut(id).data_mut();
            let g = grads.get(id).map(Tensor::data);
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * p[j]);
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .snapshot()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            config,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, store: &ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.first.len() || store.len() != grads.len() {
            return Err(TensorError::invalid(
                "Adam::step",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        for (g, m) in grads.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(TensorError::mismatch("Adam::step", m.shape(), g.shape()));
            }
        }
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let (first, second) = (&mut self.first, &mut self.second);
        store.update(|id, p| {
            let g = grads[id.0].data();
            let m = first[id.0].data_mut();
            let v = second[id.0].data_mut();
            for (i, p) in p.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

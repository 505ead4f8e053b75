use serde::{Deserialize, Serialize};

use super::{Matrix, ParamStore};
use crate::error::{DosaError, Result};

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

/// Adam with bias-corrected moments, one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable parameter using its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }

        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (rows, cols) = p.value.shape();
            let (m, v) = self.moments[i]
                .get_or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
            if m.shape() != (rows, cols) {
                return Err(DosaError::State(format!(
                    "optimizer moments for '{}' have shape {:?}, parameter is {:?}",
                    p.name,
                    m.shape(),
                    (rows, cols)
                )));
            }
            let Some(g) = p.grad_ref() else {
                continue;
            };
            let g = g.as_slice().to_vec();
            let w = p.value.as_mut_slice();
            for (((wi, gi), mi), vi) in w
                .iter_mut()
                .zip(&g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *wi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
            if !p.value.is_finite() {
                return Err(DosaError::NonFinite(format!("parameter '{}' after update", p.name)));
            }
        }
        Ok(())
    }
}

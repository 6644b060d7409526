use serde::{Deserialize, Serialize};

use super::{DiffError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub params: Vec<ParamId>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let first: Vec<Vec<f64>> = params.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
            params,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Apply one update using the gradients currently stored in `store`.
    pub fn apply(&mut self, store: &mut ParamStore) -> Result<(), DiffError> {
        // Validate everything before touching any parameter.
        for (k, &id) in self.params.iter().enumerate() {
            let p = store.param(id);
            let g = p.tensor.grad().ok_or_else(|| DiffError::MissingGrad(p.name.clone()))?;
            if g.len() != self.first[k].len() {
                return Err(DiffError::Contract(format!(
                    "adam moments for '{}' have {} entries, gradient has {}",
                    p.name,
                    self.first[k].len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for (k, &id) in self.params.iter().enumerate() {
            let tensor = store.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescale the gradients of `ids` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: f64) -> Result<f64, DiffError> {
    let mut sq = 0.0;
    for &id in ids {
        let p = store.param(id);
        let g = p.tensor.grad().ok_or_else(|| DiffError::MissingGrad(p.name.clone()))?;
        sq += g.iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for &id in ids {
            if let Some(g) = store.get_mut(id).grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    Ok(norm)
}

//! Koopman auxiliary model: state encoder, decoder, action encoder and the
//! linear latent operators `K_x`, `K_u`, with the three representation losses.
//!
//! Latents are row vectors, so one prediction step over a batch is
//! `Y_{h+1} = Y_h K_x^T + V_h K_u^T`.

pub mod oracle;
mod windows;

pub use windows::Windows;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{init_matrix, DiffError, Graph, InitKind, InputFeatures, Mlp, ParamId, ParamStore, Tensor, Var};

pub const GROUP: &str = "koopman";

/// How the masked per-step errors of one window are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskNorm {
    /// Divide by `H` regardless of how many steps are masked out.
    #[default]
    Horizon,
    /// Divide by the number of valid steps; windows with none contribute 0.
    ValidSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KoopmanConfig {
    /// `m`; defaults to `4 * state_dim` clamped to `[8, 48]`.
    pub latent_dim: Option<usize>,
    /// `k`; defaults to `max(4, 2 * action_dim)`.
    pub action_latent_dim: Option<usize>,
    /// Hidden widths shared by the three networks.
    pub hidden: Vec<usize>,
    pub mask_norm: MaskNorm,
}

impl Default for KoopmanConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            action_latent_dim: None,
            hidden: vec![128, 128],
            mask_norm: MaskNorm::Horizon,
        }
    }
}

pub fn default_latent_dim(state_dim: usize) -> usize {
    (4 * state_dim).clamp(8, 48)
}

pub fn default_action_latent_dim(action_dim: usize) -> usize {
    (2 * action_dim).max(4)
}

impl KoopmanConfig {
    pub fn dims(&self, state_dim: usize, action_dim: usize) -> (usize, usize) {
        (
            self.latent_dim.unwrap_or_else(|| default_latent_dim(state_dim)),
            self.action_latent_dim.unwrap_or_else(|| default_action_latent_dim(action_dim)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rec: f64,
    pub ls: f64,
    pub ss: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 0.5,
            ls: 0.25,
            ss: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("rec", self.rec), ("ls", self.ls), ("ss", self.ss)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("loss weight {name} must be finite and >= 0, got {w}"));
            }
        }
        Ok(())
    }

    /// `w_rec L_rec + w_ls L_ls + w_ss L_ss` on plain numbers.
    pub fn total(&self, rec: f64, ls: f64, ss: f64) -> f64 {
        self.rec * rec + self.ls * ls + self.ss * ss
    }
}

/// Scalar loss nodes for one batch of windows.
#[derive(Debug, Clone, Copy)]
pub struct KoopmanLosses {
    pub rec: Var,
    pub ls: Var,
    pub ss: Var,
    /// Encoding of each window's last state (`batch x m`), still attached.
    pub anchor: Var,
}

impl KoopmanLosses {
    pub fn weighted(&self, g: &mut Graph, w: &LossWeights) -> Result<Var, DiffError> {
        let a = g.scale(self.rec, w.rec);
        let b = g.scale(self.ls, w.ls);
        let c = g.scale(self.ss, w.ss);
        let ab = g.add(a, b)?;
        g.add(ab, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub phi_x: Mlp,
    pub psi_x: Mlp,
    pub phi_u: Mlp,
    pub k_x: ParamId,
    pub k_u: ParamId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub action_latent_dim: usize,
}

impl KoopmanModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        state_dim: usize,
        action_dim: usize,
        config: &KoopmanConfig,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        Self::with_encoder_features(store, state_dim, action_dim, config, InputFeatures::Raw, rng)
    }

    /// As [`KoopmanModel::new`], with fixed features in front of the state
    /// encoder. Only the oracle fixtures use anything but `Raw`.
    pub fn with_encoder_features<R: Rng + ?Sized>(
        store: &mut ParamStore,
        state_dim: usize,
        action_dim: usize,
        config: &KoopmanConfig,
        features: InputFeatures,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let (m, k) = config.dims(state_dim, action_dim);
        if m < state_dim {
            return Err(DiffError::Contract(format!(
                "latent dimension {m} is smaller than the state dimension {state_dim}"
            )));
        }
        if k == 0 || config.hidden.contains(&0) {
            return Err(DiffError::Contract("network widths must be positive".into()));
        }
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let xavier = InitKind::XavierUniform;
        let phi_x = Mlp::with_features(store, "phi_x", GROUP, &sizes(state_dim, m), features, xavier, rng)?;
        let psi_x = Mlp::new(store, "psi_x", GROUP, &sizes(m, state_dim), xavier, rng)?;
        let phi_u = Mlp::new(store, "phi_u", GROUP, &sizes(action_dim, k), xavier, rng)?;
        let k_x = store.add("k_x", GROUP, init_matrix(InitKind::Orthogonal, m, m, rng)?);
        let k_u = store.add("k_u", GROUP, init_matrix(InitKind::Zeros, m, k, rng)?);
        Ok(Self {
            phi_x,
            psi_x,
            phi_u,
            k_x,
            k_u,
            state_dim,
            action_dim,
            latent_dim: m,
            action_latent_dim: k,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.phi_x.param_ids();
        ids.extend(self.psi_x.param_ids());
        ids.extend(self.phi_u.param_ids());
        ids.extend([self.k_x, self.k_u]);
        ids
    }

    pub fn encode_state(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        self.phi_x.forward(g, store, x)
    }

    pub fn decode_state(&self, g: &mut Graph, store: &ParamStore, y: Var) -> Result<Var, DiffError> {
        self.psi_x.forward(g, store, y)
    }

    pub fn encode_action(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Result<Var, DiffError> {
        self.phi_u.forward(g, store, u)
    }

    /// Unrolled latent predictions `y_1..y_H` from `y0` (`batch x m`) and
    /// step-major encoded actions `v` (`H*batch x k`). Each step feeds the
    /// previous prediction, never a re-encoded true state.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, y0: Var, v: Var) -> Result<Vec<Var>, DiffError> {
        let batch = g.dims(y0).0;
        let rows = g.dims(v).0;
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(DiffError::Shape {
                op: "predict",
                left: g.dims(y0),
                right: g.dims(v),
            });
        }
        let kx = g.param(store, self.k_x)?;
        let ku = g.param(store, self.k_u)?;
        let drive = g.matmul_t(v, false, ku, true)?;
        let mut y = y0;
        let mut out = Vec::with_capacity(rows / batch);
        for h in 0..rows / batch {
            let free = g.matmul_t(y, false, kx, true)?;
            let push = g.slice_rows(drive, h * batch, batch)?;
            y = g.add(free, push)?;
            out.push(y);
        }
        Ok(out)
    }

    /// Per-(step, window) weights for the masked losses, step-major column.
    fn step_weights(w: &Windows, norm: MaskNorm) -> Vec<f64> {
        let (b, h) = (w.batch, w.horizon);
        match norm {
            MaskNorm::Horizon => w.masks.iter().map(|m| m / h as f64).collect(),
            MaskNorm::ValidSteps => {
                let valid: Vec<f64> = (0..b).map(|i| (0..h).map(|s| w.masks[s * b + i]).sum()).collect();
                w.masks
                    .iter()
                    .enumerate()
                    .map(|(j, m)| if valid[j % b] > 0.0 { m / valid[j % b] } else { 0.0 })
                    .collect()
            }
        }
    }

    /// Reconstruction, latent-prediction and state-prediction losses.
    ///
    /// Squared errors are averaged over dimensions, masked per step, averaged
    /// over the horizon (see [`MaskNorm`]) and then over windows. The
    /// reconstruction term uses the last state of each window, which is
    /// always a real (unpadded) state.
    pub fn losses(&self, g: &mut Graph, store: &ParamStore, w: &Windows, norm: MaskNorm) -> Result<KoopmanLosses, DiffError> {
        w.validate()?;
        let (b, h) = (w.batch, w.horizon);
        let x = g.constant(&w.states_tensor()?)?;
        let u = g.constant(&w.actions_tensor()?)?;
        let y = self.encode_state(g, store, x)?;
        let v = self.encode_action(g, store, u)?;

        let y0 = g.slice_rows(y, 0, b)?;
        let preds = self.predict(g, store, y0, v)?;
        let pred = g.concat_rows(&preds)?;
        let y_last = g.slice_rows(y, h * b, b)?;
        let both = g.concat_rows(&[pred, y_last])?;
        let decoded = self.decode_state(g, store, both)?;
        let x_hat = g.slice_rows(decoded, 0, h * b)?;
        let x_rec = g.slice_rows(decoded, h * b, b)?;

        let weights = g.constant_data(Self::step_weights(w, norm), (h * b, 1))?;
        let masked = |g: &mut Graph, a: Var, t: Var| -> Result<Var, DiffError> {
            let d = g.sub(a, t)?;
            let sq = g.square(d);
            let per_step = g.mean_cols(sq);
            let weighted = g.mul(per_step, weights)?;
            let total = g.sum(weighted);
            Ok(g.scale(total, 1.0 / b as f64))
        };
        let y_targets = g.slice_rows(y, b, h * b)?;
        let ls = masked(g, pred, y_targets)?;
        let x_targets = g.slice_rows(x, b, h * b)?;
        let ss = masked(g, x_hat, x_targets)?;

        let x_last = g.slice_rows(x, h * b, b)?;
        let d = g.sub(x_rec, x_last)?;
        let sq = g.square(d);
        let rec = g.mean(sq);
        Ok(KoopmanLosses { rec, ls, ss, anchor: y_last })
    }

    /// Reconstruction loss on a plain `batch x state_dim` batch of states.
    pub fn reconstruction_loss(&self, g: &mut Graph, store: &ParamStore, states: &Tensor) -> Result<Var, DiffError> {
        let x = g.constant(states)?;
        let y = self.encode_state(g, store, x)?;
        let x_hat = self.decode_state(g, store, y)?;
        let d = g.sub(x_hat, x)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    }

    /// Decoded predictions `x_hat_1..x_hat_H`, step-major `H*batch x state_dim`.
    pub fn predicted_states(&self, store: &ParamStore, w: &Windows) -> Result<Tensor, DiffError> {
        w.validate()?;
        let mut g = Graph::new();
        let x0 = g.constant_data(w.states[..w.batch * w.state_dim].to_vec(), (w.batch, w.state_dim))?;
        let u = g.constant(&w.actions_tensor()?)?;
        let y0 = self.encode_state(&mut g, store, x0)?;
        let v = self.encode_action(&mut g, store, u)?;
        let preds = self.predict(&mut g, store, y0, v)?;
        let pred = g.concat_rows(&preds)?;
        let x_hat = self.decode_state(&mut g, store, pred)?;
        Ok(g.to_tensor(x_hat))
    }

    /// Latent predictions `y_1..y_H`, step-major `H*batch x m`.
    pub fn predicted_latents(&self, store: &ParamStore, w: &Windows) -> Result<Tensor, DiffError> {
        w.validate()?;
        let mut g = Graph::new();
        let x0 = g.constant_data(w.states[..w.batch * w.state_dim].to_vec(), (w.batch, w.state_dim))?;
        let u = g.constant(&w.actions_tensor()?)?;
        let y0 = self.encode_state(&mut g, store, x0)?;
        let v = self.encode_action(&mut g, store, u)?;
        let preds = self.predict(&mut g, store, y0, v)?;
        let pred = g.concat_rows(&preds)?;
        Ok(g.to_tensor(pred))
    }

    pub fn encode_eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor, DiffError> {
        self.phi_x.eval(store, x)
    }
}

#[cfg(test)]
mod tests;

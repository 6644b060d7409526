//! Gaussian actor, critic and the clipped PPO objective.
//!
//! Both networks read whatever input the trainer hands them: detached
//! Koopman latents in KIPPO mode, raw states in baseline mode.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Graph, InitKind, Mlp, ParamId, ParamStore, Tensor, Var};

pub const ACTOR: &str = "actor";
pub const CRITIC: &str = "critic";
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Scale applied to the freshly initialized actor output layer so the
/// initial mean is close to zero.
pub const ACTOR_OUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            init_log_std: 0.0,
        }
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden);
    s.push(output);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    /// `1 x action_dim`, state independent.
    pub log_std: ParamId,
    pub action_dim: usize,
}

/// One sampled action with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Unclamped draw; the log-probability refers to this value.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
}

/// Diagonal Gaussian log-density, `log_std` clamped to the allowed range.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &mu), &ls)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (x - mu) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std
        .iter()
        .map(|ls| ls.clamp(LOG_STD_MIN, LOG_STD_MAX) + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
        .sum()
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let mean = Mlp::new(
            store,
            "actor.mean",
            ACTOR,
            &sizes(input_dim, &config.hidden, action_dim),
            InitKind::XavierUniform,
            rng,
        )?;
        let (out_w, _) = mean.layers[mean.layers.len() - 1];
        store.get_mut(out_w).data_mut().iter_mut().for_each(|w| *w *= ACTOR_OUT_SCALE);
        let log_std = store.add(
            "actor.log_std",
            ACTOR,
            Tensor::new(vec![1, action_dim], vec![config.init_log_std; action_dim])?,
        );
        Ok(Self {
            mean,
            log_std,
            action_dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.mean.param_ids();
        ids.push(self.log_std);
        ids
    }

    /// Sample one action for a single input row.
    pub fn sample<R: Rng + ?Sized>(&self, store: &ParamStore, input: &[f64], rng: &mut R) -> Result<Sample, DiffError> {
        let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
        let mean = self.mean.eval(store, &x)?.into_data();
        let log_std = store.get(self.log_std).data();
        let action: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(&mu, &ls)| {
                let eps: f64 = StandardNormal.sample(rng);
                mu + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * eps
            })
            .collect();
        let log_prob = gaussian_log_prob(&action, &mean, log_std);
        Ok(Sample {
            action,
            log_prob,
            mean,
        })
    }

    /// Log-probabilities (`batch x 1`) of `actions` and the entropy (`1 x 1`).
    pub fn log_prob_and_entropy(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        actions: Var,
    ) -> Result<(Var, Var), DiffError> {
        let mean = self.mean.forward(g, store, input)?;
        let raw = g.param(store, self.log_std)?;
        let ls = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        let neg = g.neg(ls);
        let inv_std = g.exp(neg);
        let diff = g.sub(actions, mean)?;
        let z = g.mul_row(diff, inv_std)?;
        let z2 = g.square(z);
        let quad = g.sum_cols(z2);
        let quad = g.scale(quad, -0.5);
        let ls_sum = g.sum(ls);
        let norm = g.add_scalar(ls_sum, 0.5 * (2.0 * PI).ln() * self.action_dim as f64);
        let norm = g.neg(norm);
        let log_prob = g.add_row(quad, norm)?;
        let entropy = g.add_scalar(ls_sum, 0.5 * (2.0 * PI * std::f64::consts::E).ln() * self.action_dim as f64);
        Ok((log_prob, entropy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub net: Mlp,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let net = Mlp::new(store, "critic", CRITIC, &sizes(input_dim, &config.hidden, 1), InitKind::XavierUniform, rng)?;
        Ok(Self { net })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.net.param_ids()
    }

    pub fn value(&self, store: &ParamStore, input: &[f64]) -> Result<f64, DiffError> {
        let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
        Ok(self.net.eval(store, &x)?.data()[0])
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Var, DiffError> {
        self.net.forward(g, store, input)
    }
}

/// Action, log-probability and value for one input.
pub fn act<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    value_fn: &ValueFunction,
    store: &ParamStore,
    input: &[f64],
    rng: &mut R,
) -> Result<(Sample, f64), DiffError> {
    let sample = policy.sample(store, input, rng)?;
    let value = value_fn.value(store, input)?;
    for (what, v) in [("action mean", sample.mean.as_slice()), ("value", std::slice::from_ref(&value))] {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite {
                what: what.to_string(),
                index: i,
                value: v[i],
            });
        }
    }
    Ok((sample, value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub policy_coef: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub clip_value: bool,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            policy_coef: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.0,
            clip_value: true,
            normalize_advantages: true,
        }
    }
}

/// Rollout-side data of one PPO minibatch. Rows align with the input
/// node handed to [`ppo_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    /// Unclamped actions as sampled during the rollout.
    pub actions: Tensor,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PpoTerms {
    /// `-E[min(r A, clip(r) A)]`.
    pub policy: Var,
    /// `E[(V - R)^2]`, or its clipped pessimistic form.
    pub value: Var,
    pub entropy: Var,
    /// `c_pi policy + c_v value - c_ent entropy` (`c_pi = 1` by default).
    pub total: Var,
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Normalize to zero mean and unit sample standard deviation.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt() + 1e-8;
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// PPO objective on input node `x` (`batch x input_dim`). The caller is
/// responsible for `x` carrying no gradient path into an encoder.
pub fn ppo_loss(
    g: &mut Graph,
    store: &ParamStore,
    policy: &GaussianPolicy,
    value_fn: &ValueFunction,
    x: Var,
    batch: &PpoBatch,
    config: &PpoConfig,
) -> Result<PpoTerms, DiffError> {
    let n = g.dims(x).0;
    for (name, len) in [
        ("actions", batch.actions.dims2()?.0),
        ("old_log_probs", batch.old_log_probs.len()),
        ("old_values", batch.old_values.len()),
        ("advantages", batch.advantages.len()),
        ("returns", batch.returns.len()),
    ] {
        if len != n {
            return Err(DiffError::Contract(format!("ppo batch: {name} has {len} rows, inputs have {n}")));
        }
    }
    let adv = if config.normalize_advantages {
        normalize(&batch.advantages)
    } else {
        batch.advantages.clone()
    };
    let a = g.constant(&batch.actions)?;
    let (log_prob, entropy) = policy.log_prob_and_entropy(g, store, x, a)?;
    let old = g.constant_data(batch.old_log_probs.clone(), (n, 1))?;
    let adv = g.constant_data(adv, (n, 1))?;
    let delta = g.sub(log_prob, old)?;
    let ratio = g.exp(delta);
    let surr = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let surr_clipped = g.mul(clipped, adv)?;
    let pessimistic = g.minimum(surr, surr_clipped)?;
    let objective = g.mean(pessimistic);
    let policy_loss = g.neg(objective);

    let v = value_fn.forward(g, store, x)?;
    let ret = g.constant_data(batch.returns.clone(), (n, 1))?;
    let err = g.sub(v, ret)?;
    let sq = g.square(err);
    let value_loss = if config.clip_value {
        let old_v = g.constant_data(batch.old_values.clone(), (n, 1))?;
        let dv = g.sub(v, old_v)?;
        let dv = g.clamp(dv, -config.clip, config.clip);
        let v_clipped = g.add(old_v, dv)?;
        let err_c = g.sub(v_clipped, ret)?;
        let sq_c = g.square(err_c);
        let worst = g.maximum(sq, sq_c)?;
        g.mean(worst)
    } else {
        g.mean(sq)
    };

    let weighted_p = g.scale(policy_loss, config.policy_coef);
    let weighted_v = g.scale(value_loss, config.value_coef);
    let weighted_e = g.scale(entropy, -config.entropy_coef);
    let pv = g.add(weighted_p, weighted_v)?;
    let total = g.add(pv, weighted_e)?;
    Ok(PpoTerms {
        policy: policy_loss,
        value: value_loss,
        entropy,
        total,
    })
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, PpoConfig};
use crate::diff::AdamConfig;
use crate::envs::EnvConfig;
use crate::koopman::{KoopmanConfig, LossWeights};
use crate::metrics::EwmaConvention;

/// Full description of one training run. Unknown keys are rejected.
///
/// ```toml
/// seed = 1
/// total_steps = 300000
/// kippo_enabled = true
///
/// [env]
/// name = "pendulum"
///
/// [weights]
/// rec = 0.5
/// ls = 0.25
/// ss = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    /// Attach the Koopman auxiliary learner; false gives plain PPO.
    pub kippo_enabled: bool,
    /// With `kippo_enabled = false`: feed actor and critic the latents of the
    /// initial, never-trained encoder instead of raw states.
    pub frozen_encoder: bool,
    pub rollout_len: usize,
    pub num_minibatches: usize,
    pub epochs: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub anneal_lr: bool,
    pub max_grad_norm: f64,
    pub ewma_alpha: f64,
    pub ewma_convention: EwmaConvention,
    /// Fill `wall_time_s`; off by default so metrics files are reproducible.
    pub record_wall_time: bool,
    /// States kept from the first rollout to monitor encoder drift.
    pub probe_size: usize,
    /// Write every rollout to `trajectories/` in the run directory.
    pub dump_trajectories: bool,
    /// Save a checkpoint every this many updates (0: only at the end).
    pub checkpoint_every: usize,
    pub output_dir: Option<String>,
    pub env: EnvConfig,
    pub weights: LossWeights,
    pub koopman: KoopmanConfig,
    pub agent: AgentConfig,
    pub ppo: PpoConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            total_steps: 1_000_000,
            kippo_enabled: true,
            frozen_encoder: false,
            rollout_len: 2048,
            num_minibatches: 32,
            epochs: 10,
            horizon: 8,
            gamma: 0.99,
            gae_lambda: 0.95,
            anneal_lr: true,
            max_grad_norm: 0.5,
            ewma_alpha: 0.05,
            ewma_convention: EwmaConvention::Printed,
            record_wall_time: false,
            probe_size: 256,
            dump_trajectories: false,
            checkpoint_every: 0,
            output_dir: None,
            env: EnvConfig::named("pendulum"),
            weights: LossWeights::default(),
            koopman: KoopmanConfig::default(),
            agent: AgentConfig::default(),
            ppo: PpoConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override '{0}' must look like key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parse a `key=value` override. Values are read as TOML literals when
/// possible (`0.5`, `true`, `[64, 64]`), otherwise as plain strings.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::Override(text.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(text.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Set a dotted key inside a TOML table, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl TrainConfig {
    /// Parse TOML text, apply `key=value` overrides in order, validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (k, v) in overrides {
            set_dotted(&mut table, k, v.clone())?;
        }
        let config: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.rollout_len == 0 || self.num_minibatches == 0 || self.epochs == 0 {
            return bad("rollout_len, num_minibatches and epochs must be positive".into());
        }
        if !self.rollout_len.is_multiple_of(self.num_minibatches) {
            return bad(format!(
                "rollout_len {} is not divisible by num_minibatches {}",
                self.rollout_len, self.num_minibatches
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.horizon >= self.rollout_len {
            return bad(format!("horizon {} must be shorter than rollout_len {}", self.horizon, self.rollout_len));
        }
        self.weights.validate().map_err(ConfigError::Invalid)?;
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda), ("ewma_alpha", self.ewma_alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.ppo.clip > 0.0 && self.ppo.clip < 1.0) {
            return bad(format!("ppo.clip must lie in (0, 1), got {}", self.ppo.clip));
        }
        if !(self.max_grad_norm > 0.0) || !(self.adam.lr >= 0.0) || !(self.adam.eps > 0.0) {
            return bad("max_grad_norm and adam.eps must be positive, adam.lr non-negative".into());
        }
        if self.kippo_enabled && self.frozen_encoder {
            return bad("frozen_encoder only applies with kippo_enabled = false".into());
        }
        if self.agent.hidden.contains(&0) || self.koopman.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// `ceil(total_steps / rollout_len)`; the run consumes
    /// `num_updates * rollout_len` environment steps.
    pub fn num_updates(&self) -> usize {
        self.total_steps.div_ceil(self.rollout_len as u64) as usize
    }

    pub fn minibatch_size(&self) -> usize {
        self.rollout_len / self.num_minibatches
    }

    /// Whether a Koopman model is built at all.
    pub fn uses_encoder(&self) -> bool {
        self.kippo_enabled || self.frozen_encoder
    }

    /// SHA-256 of the canonical TOML, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

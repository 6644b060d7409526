//! Versioned JSON snapshots of a whole run.
//!
//! Loading builds a brand-new trainer from the stored config and only swaps
//! in the saved state after every name, shape and length has been checked,
//! so a bad file never leaves a half-restored trainer behind.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DriftRow, Streams, TrainConfig, TrainError, Trainer, STREAM_NAMES};
use crate::diff::rng::RngSnapshot;
use crate::diff::{AdamState, Tensor};
use crate::envs::EnvSnapshot;
use crate::metrics::{Ewma, MetricsRow};
use crate::rollout::Collector;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    Version { found: u64, expected: u32 },
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub params: Vec<ParamRecord>,
    pub optimizers: BTreeMap<String, AdamState>,
    pub rngs: BTreeMap<String, RngSnapshot>,
    pub env: EnvSnapshot,
    pub collector: Collector,
    pub update: usize,
    pub global_step: u64,
    pub ewma: Ewma,
    pub rows: Vec<MetricsRow>,
    pub drift: Vec<DriftRow>,
    pub probe: Option<Tensor>,
    pub probe_latents: Option<Tensor>,
    /// Elapsed seconds, kept only when wall time is recorded.
    pub wall_time_s: f64,
}

fn mismatch(msg: String) -> TrainError {
    CheckpointError::Mismatch(msg).into()
}

impl Checkpoint {
    pub fn capture(t: &Trainer) -> Self {
        let params = t
            .store
            .params()
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                group: p.group.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            })
            .collect();
        let rngs = [
            ("env", &t.streams.env),
            ("action", &t.streams.action),
            ("shuffle", &t.streams.shuffle),
        ]
        .into_iter()
        .map(|(k, r)| (k.to_string(), RngSnapshot::capture(r)))
        .collect();
        let strip = |x: &Option<Tensor>| {
            x.as_ref()
                .map(|t| Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor"))
        };
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: t.config.hash(),
            config: t.config.clone(),
            params,
            optimizers: t.optimizers.clone(),
            rngs,
            env: t.env.snapshot(),
            collector: t.collector.clone(),
            update: t.update,
            global_step: t.global_step,
            ewma: t.ewma,
            rows: t.rows.clone(),
            drift: t.drift.clone(),
            probe: strip(&t.probe),
            probe_latents: strip(&t.probe_latents),
            wall_time_s: if t.config.record_wall_time {
                t.wall_offset + t.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        serde_json::to_string(self).map_err(|e| CheckpointError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CheckpointError::Format("missing integer field 'version'".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(CheckpointError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Format(e.to_string()))
    }

    /// Write through a temporary file and rename, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Rebuild a trainer in exactly the saved state.
    pub fn restore(&self) -> Result<Trainer, TrainError> {
        if self.config.hash() != self.config_hash {
            return Err(mismatch("stored config does not match its recorded hash".into()));
        }
        let mut t = Trainer::new(self.config.clone())?;
        let ids: Vec<_> = t.store.ids().collect();
        if ids.len() != self.params.len() {
            return Err(mismatch(format!(
                "{} parameters stored, the model has {}",
                self.params.len(),
                ids.len()
            )));
        }
        for (&id, rec) in ids.iter().zip(&self.params) {
            let p = t.store.param(id);
            if p.name != rec.name || p.group != rec.group || p.tensor.shape() != rec.shape.as_slice() {
                return Err(mismatch(format!(
                    "parameter '{}' {:?} in group '{}' does not match model parameter '{}' {:?} in group '{}'",
                    rec.name,
                    rec.shape,
                    rec.group,
                    p.name,
                    p.tensor.shape(),
                    p.group
                )));
            }
            if rec.data.len() != p.tensor.numel() || rec.data.iter().any(|v| !v.is_finite()) {
                return Err(mismatch(format!("parameter '{}' has bad data", rec.name)));
            }
        }
        if self.optimizers.keys().ne(t.optimizers.keys()) {
            return Err(mismatch(format!(
                "optimizer groups {:?} differ from {:?}",
                self.optimizers.keys().collect::<Vec<_>>(),
                t.optimizers.keys().collect::<Vec<_>>()
            )));
        }
        for (group, saved) in &self.optimizers {
            let fresh = &t.optimizers[group];
            let sizes = |s: &AdamState| (s.first.iter().map(Vec::len).collect::<Vec<_>>(), s.second.iter().map(Vec::len).collect::<Vec<_>>());
            if saved.params != fresh.params || sizes(saved) != sizes(fresh) {
                return Err(mismatch(format!("optimizer state for '{group}' does not fit the model")));
            }
        }
        let rng = |name: &str| {
            self.rngs
                .get(name)
                .ok_or_else(|| mismatch(format!("missing random stream '{name}'")))
                .and_then(|s| s.restore().map_err(|e| mismatch(format!("stream '{name}': {e}"))))
        };
        let streams = Streams {
            env: rng(STREAM_NAMES[0])?,
            action: rng(STREAM_NAMES[1])?,
            shuffle: rng(STREAM_NAMES[2])?,
        };
        if self.rngs.len() != STREAM_NAMES.len() {
            return Err(mismatch(format!("unexpected random streams {:?}", self.rngs.keys().collect::<Vec<_>>())));
        }
        t.env.restore(&self.env)?;
        let sd = t.env.spec().state_dim;
        if !self.collector.needs_reset && self.collector.obs.len() != sd {
            return Err(mismatch(format!("collector observation has {} values, expected {sd}", self.collector.obs.len())));
        }
        if self.update > t.num_updates() {
            return Err(mismatch(format!("update {} beyond the run's {} updates", self.update, t.num_updates())));
        }

        // Everything checked; commit.
        for (&id, rec) in ids.iter().zip(&self.params) {
            t.store.get_mut(id).assign(&rec.data)?;
        }
        t.optimizers = self.optimizers.clone();
        t.streams = streams;
        t.collector = self.collector.clone();
        t.update = self.update;
        t.global_step = self.global_step;
        t.ewma = self.ewma;
        t.rows = self.rows.clone();
        t.drift = self.drift.clone();
        t.probe = self.probe.clone();
        t.probe_latents = self.probe_latents.clone();
        t.wall_offset = self.wall_time_s;
        t.started = Instant::now();
        Ok(t)
    }
}

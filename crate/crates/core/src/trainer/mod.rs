//! Alternating rollout / optimization loop.
//!
//! Each minibatch builds one tape holding the representation losses and the
//! PPO loss. PPO reads the encoder output through a `detach` node, and the
//! Koopman, actor and critic parameters live in disjoint groups, so one
//! backward pass on the sum yields decoupled gradients. Every group has its
//! own Adam state and its own gradient-norm clip.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use config::{parse_override, set_dotted, ConfigError, TrainConfig};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ppo_loss, GaussianPolicy, PpoBatch, PpoTerms, ValueFunction, ACTOR, CRITIC};
use crate::diff::rng::RunSeed;
use crate::diff::{clip_grad_norm, AdamState, DiffError, Graph, ParamStore, Tensor, Var};
use crate::envs::{make_env, Env, EnvError};
use crate::koopman::{KoopmanLosses, KoopmanModel, Windows, GROUP as KOOPMAN};
use crate::metrics::{cte, write_metrics_csv, Ewma, MetricsRow};
use crate::rollout::{Collector, GaeOutput, RolloutBuffer, RolloutError, RolloutStats};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite {what} at update {update} (global step {global_step}): {detail}")]
    NonFinite {
        update: usize,
        global_step: u64,
        what: String,
        detail: String,
    },
    #[error("io error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl TrainError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }
}

/// Named random streams of one run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
}

pub const STREAM_NAMES: [&str; 3] = ["env", "action", "shuffle"];

impl Streams {
    fn new(seed: RunSeed) -> Self {
        Self {
            env: seed.stream("env"),
            action: seed.stream("action"),
            shuffle: seed.stream("shuffle"),
        }
    }
}

/// Mean absolute change of the encoder output on the probe batch between
/// consecutive optimization phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub global_step: u64,
    pub mean_abs_change: f64,
}

/// Losses of one minibatch (plain numbers).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MinibatchLosses {
    pub rec: f64,
    pub ls: f64,
    pub ss: f64,
    pub ki: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

impl MinibatchLosses {
    fn add(&mut self, o: &MinibatchLosses) {
        self.rec += o.rec;
        self.ls += o.ls;
        self.ss += o.ss;
        self.ki += o.ki;
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
    }

    fn scaled(mut self, c: f64) -> Self {
        for v in [
            &mut self.rec,
            &mut self.ls,
            &mut self.ss,
            &mut self.ki,
            &mut self.policy,
            &mut self.value,
            &mut self.entropy,
        ] {
            *v *= c;
        }
        self
    }
}

/// Nodes of one minibatch tape.
pub struct MinibatchVars {
    pub koopman: Option<(KoopmanLosses, Var)>,
    pub ppo: PpoTerms,
    pub total: Var,
}

/// Outcome of one optimization phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStats {
    /// Mean losses per epoch.
    pub epochs: Vec<MinibatchLosses>,
    /// Mean over every minibatch of the phase.
    pub mean: MinibatchLosses,
}

/// Everything about one completed update, for callers that want more than
/// the CSV row.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub row: MetricsRow,
    pub stats: RolloutStats,
    pub phase: PhaseStats,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub koopman: Option<KoopmanModel>,
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
    pub optimizers: BTreeMap<String, AdamState>,
    pub env: Box<dyn Env>,
    pub collector: Collector,
    pub streams: Streams,
    pub update: usize,
    pub global_step: u64,
    pub ewma: Ewma,
    pub rows: Vec<MetricsRow>,
    pub drift: Vec<DriftRow>,
    pub probe: Option<Tensor>,
    pub probe_latents: Option<Tensor>,
    started: Instant,
    /// Wall time accumulated before a resume.
    wall_offset: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let seed = RunSeed(config.seed);
        let mut store = ParamStore::new();
        let koopman = if config.uses_encoder() {
            let mut rng = seed.stream("init.koopman");
            Some(KoopmanModel::new(&mut store, spec.state_dim, spec.action_dim, &config.koopman, &mut rng)?)
        } else {
            None
        };
        let input_dim = koopman.as_ref().map_or(spec.state_dim, |k| k.latent_dim);
        let policy = GaussianPolicy::new(&mut store, input_dim, spec.action_dim, &config.agent, &mut seed.stream("init.actor"))?;
        let value = ValueFunction::new(&mut store, input_dim, &config.agent, &mut seed.stream("init.critic"))?;
        let mut optimizers = BTreeMap::new();
        let mut groups = vec![ACTOR, CRITIC];
        if config.kippo_enabled {
            groups.push(KOOPMAN);
        }
        for group in groups {
            optimizers.insert(group.to_string(), AdamState::new(config.adam, &store, store.group_ids(group)));
        }
        Ok(Self {
            ewma: Ewma::new(config.ewma_alpha, config.ewma_convention),
            config,
            store,
            koopman,
            policy,
            value,
            optimizers,
            env,
            collector: Collector::new(),
            streams: Streams::new(seed),
            update: 0,
            global_step: 0,
            rows: Vec::new(),
            drift: Vec::new(),
            probe: None,
            probe_latents: None,
            started: Instant::now(),
            wall_offset: 0.0,
        })
    }

    pub fn num_updates(&self) -> usize {
        self.config.num_updates()
    }

    pub fn finished(&self) -> bool {
        self.update >= self.num_updates()
    }

    /// Map an observation to the actor/critic input.
    pub fn policy_input(&self, obs: &[f64]) -> Result<Vec<f64>, DiffError> {
        match &self.koopman {
            Some(k) => Ok(k.encode_eval(&self.store, &Tensor::new(vec![1, obs.len()], obs.to_vec())?)?.into_data()),
            None => Ok(obs.to_vec()),
        }
    }

    /// Collect one rollout with the current policy, advancing the env and
    /// action streams.
    pub fn collect(&mut self) -> Result<(RolloutBuffer, RolloutStats), TrainError> {
        let (store, koopman) = (&self.store, &self.koopman);
        let input = |obs: &[f64]| -> Result<Vec<f64>, DiffError> {
            match koopman {
                Some(k) => Ok(k.encode_eval(store, &Tensor::new(vec![1, obs.len()], obs.to_vec())?)?.into_data()),
                None => Ok(obs.to_vec()),
            }
        };
        Ok(self.collector.collect(
            self.env.as_mut(),
            store,
            &self.policy,
            &self.value,
            &input,
            self.config.rollout_len,
            self.config.horizon,
            self.config.gamma,
            &mut self.streams.env,
            &mut self.streams.action,
        )?)
    }

    /// Build the tape for one minibatch without touching any gradient.
    pub fn minibatch(
        &self,
        buffer: &RolloutBuffer,
        gae: &GaeOutput,
        indices: &[usize],
    ) -> Result<(Graph, MinibatchVars), TrainError> {
        let n = indices.len();
        let ad = buffer.action_dim;
        let mut actions = Vec::with_capacity(n * ad);
        for &t in indices {
            actions.extend_from_slice(buffer.action(t));
        }
        let batch = PpoBatch {
            actions: Tensor::new(vec![n, ad], actions)?,
            old_log_probs: indices.iter().map(|&t| buffer.log_probs[t]).collect(),
            old_values: indices.iter().map(|&t| buffer.values[t]).collect(),
            advantages: indices.iter().map(|&t| gae.advantages[t]).collect(),
            returns: indices.iter().map(|&t| gae.returns[t]).collect(),
        };
        let mut g = Graph::new();
        let (koopman, input) = match &self.koopman {
            Some(model) if self.config.kippo_enabled => {
                let w = buffer.windows(indices);
                let losses = model.losses(&mut g, &self.store, &w, self.config.koopman.mask_norm)?;
                let ki = losses.weighted(&mut g, &self.config.weights)?;
                let input = g.detach(losses.anchor);
                (Some((losses, ki)), input)
            }
            Some(model) => {
                let x = g.constant(&self.gather_states(buffer, indices)?)?;
                let y = model.encode_state(&mut g, &self.store, x)?;
                (None, g.detach(y))
            }
            None => (None, g.constant(&self.gather_states(buffer, indices)?)?),
        };
        let ppo = ppo_loss(&mut g, &self.store, &self.policy, &self.value, input, &batch, &self.config.ppo)?;
        let total = match &koopman {
            Some((_, ki)) => g.add(*ki, ppo.total)?,
            None => ppo.total,
        };
        Ok((g, MinibatchVars { koopman, ppo, total }))
    }

    fn gather_states(&self, buffer: &RolloutBuffer, indices: &[usize]) -> Result<Tensor, DiffError> {
        let sd = buffer.state_dim;
        let mut data = Vec::with_capacity(indices.len() * sd);
        for &t in indices {
            data.extend_from_slice(buffer.state(t));
        }
        Tensor::new(vec![indices.len(), sd], data)
    }

    fn non_finite(&self, what: &str, detail: String) -> TrainError {
        TrainError::NonFinite {
            update: self.update + 1,
            global_step: self.global_step,
            what: what.to_string(),
            detail,
        }
    }

    /// One gradient step on one minibatch.
    pub fn train_minibatch(
        &mut self,
        buffer: &RolloutBuffer,
        gae: &GaeOutput,
        indices: &[usize],
    ) -> Result<MinibatchLosses, TrainError> {
        let (g, vars) = self.minibatch(buffer, gae, indices)?;
        let mut out = MinibatchLosses {
            policy: g.scalar(vars.ppo.policy),
            value: g.scalar(vars.ppo.value),
            entropy: g.scalar(vars.ppo.entropy),
            ..Default::default()
        };
        if let Some((l, ki)) = &vars.koopman {
            out.rec = g.scalar(l.rec);
            out.ls = g.scalar(l.ls);
            out.ss = g.scalar(l.ss);
            out.ki = g.scalar(*ki);
        }
        let values = [
            ("L_rec", out.rec),
            ("L_ls", out.ls),
            ("L_ss", out.ss),
            ("L_ppo_policy", out.policy),
            ("L_ppo_value", out.value),
            ("entropy", out.entropy),
        ];
        if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(self.non_finite("loss", format!("{name} = {v}")));
        }
        self.store.zero_grad();
        g.backward(vars.total, &mut self.store)?;
        if let Err(e) = self.store.check_finite() {
            return Err(self.non_finite("gradient", e.to_string()));
        }
        let max_norm = self.config.max_grad_norm;
        for opt in self.optimizers.values_mut() {
            clip_grad_norm(&mut self.store, &opt.params, max_norm)?;
            opt.apply(&mut self.store)?;
        }
        Ok(out)
    }

    /// `epochs` passes of shuffled minibatches over a full buffer.
    pub fn optimize_phase(&mut self, buffer: &RolloutBuffer, gae: &GaeOutput) -> Result<PhaseStats, TrainError> {
        let mut epochs = Vec::with_capacity(self.config.epochs);
        let mut total = MinibatchLosses::default();
        for _ in 0..self.config.epochs {
            let parts = minibatch_partition(buffer.filled(), self.config.num_minibatches, &mut self.streams.shuffle);
            let mut epoch = MinibatchLosses::default();
            for chunk in &parts {
                let l = self.train_minibatch(buffer, gae, chunk)?;
                epoch.add(&l);
            }
            let epoch = epoch.scaled(1.0 / self.config.num_minibatches as f64);
            total.add(&epoch);
            epochs.push(epoch);
        }
        Ok(PhaseStats {
            mean: total.scaled(1.0 / self.config.epochs as f64),
            epochs,
        })
    }

    fn set_learning_rate(&mut self) {
        let lr = if self.config.anneal_lr {
            let frac = 1.0 - self.update as f64 / self.num_updates() as f64;
            frac * self.config.adam.lr
        } else {
            self.config.adam.lr
        };
        for opt in self.optimizers.values_mut() {
            opt.set_lr(lr);
        }
    }

    /// CTE averaged over the fully valid windows of a buffer, computed with
    /// the current model before it has trained on that buffer.
    pub fn buffer_cte(&self, buffer: &RolloutBuffer) -> Result<Option<f64>, TrainError> {
        let Some(model) = &self.koopman else {
            return Ok(None);
        };
        let valid: Vec<usize> = (0..buffer.filled()).filter(|&t| buffer.window_mask(t).iter().all(|&b| b)).collect();
        if valid.is_empty() {
            return Ok(None);
        }
        let w = buffer.windows(&valid);
        Ok(Some(windows_cte(model, &self.store, &w)?))
    }

    fn track_drift(&mut self, buffer: &RolloutBuffer) -> Result<(), TrainError> {
        let Some(model) = &self.koopman else {
            return Ok(());
        };
        if self.probe.is_none() {
            let n = self.config.probe_size.min(buffer.filled());
            if n == 0 {
                return Ok(());
            }
            let probe = Tensor::new(vec![n, buffer.state_dim], buffer.states[..n * buffer.state_dim].to_vec())?;
            self.probe_latents = Some(model.encode_eval(&self.store, &probe)?);
            self.probe = Some(probe);
            return Ok(());
        }
        let probe = self.probe.as_ref().expect("checked above");
        let now = model.encode_eval(&self.store, probe)?;
        if let Some(prev) = &self.probe_latents {
            let change = now.data().iter().zip(prev.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / now.numel() as f64;
            if !change.is_finite() {
                return Err(self.non_finite("encoder drift", format!("{change}")));
            }
            self.drift.push(DriftRow {
                global_step: self.global_step,
                mean_abs_change: change,
            });
        }
        self.probe_latents = Some(now);
        Ok(())
    }

    /// Collect one rollout, optimize on it and record the metrics row.
    pub fn step_update(&mut self) -> Result<UpdateReport, TrainError> {
        self.set_learning_rate();
        let (buffer, stats) = self.collect()?;
        self.global_step += buffer.filled() as u64;
        if self.config.dump_trajectories {
            if let Some(dir) = &self.config.output_dir {
                let dir = Path::new(dir).join("trajectories");
                std::fs::create_dir_all(&dir).map_err(|e| TrainError::io(&dir, e))?;
                let path = dir.join(format!("update_{:05}.csv", self.update + 1));
                buffer.write_trajectory_csv(&path, self.global_step - buffer.filled() as u64)?;
            }
        }
        if self.koopman.is_some() && self.probe.is_none() {
            self.track_drift(&buffer)?;
        }
        let cte_value = if self.config.kippo_enabled { self.buffer_cte(&buffer)? } else { None };
        let gae = buffer.gae(self.config.gamma, self.config.gae_lambda);
        let phase = self.optimize_phase(&buffer, &gae)?;
        if self.config.kippo_enabled {
            self.track_drift(&buffer)?;
        }
        for &g in &stats.episode_returns {
            self.ewma.push(g);
        }
        self.update += 1;
        let kippo = self.config.kippo_enabled;
        let row = MetricsRow {
            global_step: self.global_step,
            episodic_return_mean: (!stats.episode_returns.is_empty())
                .then(|| stats.episode_returns.iter().sum::<f64>() / stats.episode_returns.len() as f64),
            ewma: self.ewma.value,
            l_rec: kippo.then_some(phase.mean.rec),
            l_ls: kippo.then_some(phase.mean.ls),
            l_ss: kippo.then_some(phase.mean.ss),
            l_ppo_policy: phase.mean.policy,
            l_ppo_value: phase.mean.value,
            entropy: phase.mean.entropy,
            cte: cte_value,
            wall_time_s: self
                .config
                .record_wall_time
                .then(|| self.wall_offset + self.started.elapsed().as_secs_f64()),
        };
        self.rows.push(row.clone());
        Ok(UpdateReport { row, stats, phase })
    }

    /// Run the remaining updates, calling `on_update` after each.
    pub fn run(&mut self, mut on_update: impl FnMut(&Trainer, &UpdateReport) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while !self.finished() {
            let report = self.step_update()?;
            on_update(self, &report)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        ck.restore()
    }

    /// Prediction quality on fresh on-policy windows from a separate
    /// environment instance and random streams (training state untouched):
    /// `(mse, cte)` over fully valid windows, MSE averaged over steps and
    /// state dimensions.
    pub fn evaluate_prediction(&self, len: usize) -> Result<Option<(f64, f64)>, TrainError> {
        let Some(model) = &self.koopman else {
            return Ok(None);
        };
        let mut env = make_env(&self.config.env)?;
        let seed = RunSeed(self.config.seed);
        let (mut env_rng, mut action_rng) = (seed.stream("eval.env"), seed.stream("eval.action"));
        let input = |obs: &[f64]| self.policy_input(obs);
        let (buffer, _) = Collector::new().collect(
            env.as_mut(),
            &self.store,
            &self.policy,
            &self.value,
            &input,
            len,
            self.config.horizon,
            self.config.gamma,
            &mut env_rng,
            &mut action_rng,
        )?;
        let valid: Vec<usize> = (0..buffer.filled()).filter(|&t| buffer.window_mask(t).iter().all(|&b| b)).collect();
        if valid.is_empty() {
            return Ok(None);
        }
        let w = buffer.windows(&valid);
        let pred = model.predicted_states(&self.store, &w)?;
        let truth = &w.states[w.batch * w.state_dim..];
        let mse = pred.data().iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64;
        Ok(Some((mse, windows_cte(model, &self.store, &w)?)))
    }
}

/// Shuffle `0..n` and cut it into `k` equal minibatches (`n` divisible by `k`).
pub fn minibatch_partition<R: rand::Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(n / k).map(<[usize]>::to_vec).collect()
}

/// Mean CTE over the windows of a batch (all assumed valid).
pub fn windows_cte(model: &KoopmanModel, store: &ParamStore, w: &Windows) -> Result<f64, TrainError> {
    let pred = model.predicted_states(store, w)?;
    let (b, h) = (w.batch, w.horizon);
    let mut total = 0.0;
    for i in 0..b {
        let p: Vec<Vec<f64>> = (0..h).map(|s| pred.row(s * b + i).to_vec()).collect();
        let t: Vec<Vec<f64>> = (1..=h).map(|s| w.state(i, s).to_vec()).collect();
        total += cte(&p, &t).map_err(|e| DiffError::Contract(e.to_string()))?;
    }
    Ok(total / b as f64)
}

/// Files written for one run.
pub const METRICS_FILE: &str = "metrics.csv";
pub const DRIFT_FILE: &str = "drift.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";
/// Diagnostic written when a run aborts.
pub const ABORT_FILE: &str = "abort.txt";

pub fn write_drift_csv(path: &Path, rows: &[DriftRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::io(path, e))?;
    if rows.is_empty() {
        w.write_record(["global_step", "mean_abs_change"]).map_err(|e| TrainError::io(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| TrainError::io(path, e))?;
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}

impl Trainer {
    /// Write metrics, drift and config files into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let metrics = dir.join(METRICS_FILE);
        write_metrics_csv(&metrics, &self.rows).map_err(|e| TrainError::io(&metrics, e))?;
        if self.koopman.is_some() {
            write_drift_csv(&dir.join(DRIFT_FILE), &self.drift)?;
        }
        let cfg = dir.join(CONFIG_FILE);
        std::fs::write(&cfg, self.config.to_toml()).map_err(|e| TrainError::io(&cfg, e))
    }
}

/// Train to completion, writing outputs (and periodic checkpoints) into `dir`.
/// Resumes from `dir/checkpoint.json` when `resume` is set and one exists.
pub fn train_to_dir(config: TrainConfig, dir: &Path, resume: bool) -> Result<Trainer, TrainError> {
    let ck_path = dir.join(CHECKPOINT_FILE);
    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.config_hash != config.hash() {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint config hash {} differs from the requested config {}",
                ck.config_hash,
                config.hash()
            ))
            .into());
        }
        Trainer::from_checkpoint(&ck)?
    } else {
        Trainer::new(config)?
    };
    std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    let every = trainer.config.checkpoint_every;
    let result = trainer.run(|t, _| {
        if every > 0 && t.update % every == 0 && !t.finished() {
            t.checkpoint().save(&ck_path)?;
            t.write_outputs(dir)?;
        }
        Ok(())
    });
    // Partial results are kept even when the run aborts.
    trainer.write_outputs(dir)?;
    if let Err(e) = &result {
        let path = dir.join(ABORT_FILE);
        std::fs::write(&path, format!("{e}\n")).map_err(|err| TrainError::io(&path, err))?;
    }
    result?;
    trainer.checkpoint().save(&ck_path)?;
    Ok(trainer)
}

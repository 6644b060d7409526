//! On-policy experience collection with prediction windows.
//!
//! Windows are anchored backward: stored step `t` holds
//! `x_0 = states[t-H]`, targets `states[t-H+1..=t]`, actions
//! `applied_actions[t-H..t]` and mask bits from the dones at steps
//! `t-H..t`. Steps with `t < H` are zero-padded in front and fully masked; their last
//! state is still `states[t]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{act, GaussianPolicy, ValueFunction};
use crate::diff::{DiffError, ParamStore};
use crate::envs::{Env, EnvError};
use crate::koopman::Windows;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// `b_h` for `h = 1..=H` from the dones of the window's `H` steps: 1 iff no
/// done occurs at any of the first `h` steps.
pub fn build_mask(dones: &[bool]) -> Vec<bool> {
    let mut alive = true;
    dones
        .iter()
        .map(|&d| {
            alive = alive && !d;
            // Bit h depends on dones[0..h], including dones[h-1].
            alive
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// `delta_t = r_t + gamma V_{t+1} (1 - d_t) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - d_t) A_{t+1}`; `V_T` is `bootstrap`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> GaeOutput {
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    GaeOutput { advantages, returns }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub len: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Observation at which each action was taken, `T x state_dim`.
    pub states: Vec<f64>,
    /// Sampled (unclamped) actions; log-probabilities refer to these.
    pub actions: Vec<f64>,
    /// Actions after clamping to the environment's box.
    pub applied_actions: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Rewards with `gamma V(final observation)` added on truncated steps.
    pub gae_rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the observation following the last step.
    pub bootstrap_value: f64,
    pub state_windows: Vec<f64>,
    pub action_windows: Vec<f64>,
    pub mask_windows: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new(len: usize, horizon: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            len,
            horizon,
            state_dim,
            action_dim,
            states: Vec::with_capacity(len * state_dim),
            actions: Vec::with_capacity(len * action_dim),
            applied_actions: Vec::with_capacity(len * action_dim),
            rewards: Vec::with_capacity(len),
            gae_rewards: Vec::with_capacity(len),
            terminated: Vec::with_capacity(len),
            truncated: Vec::with_capacity(len),
            log_probs: Vec::with_capacity(len),
            values: Vec::with_capacity(len),
            bootstrap_value: 0.0,
            state_windows: Vec::new(),
            action_windows: Vec::new(),
            mask_windows: Vec::new(),
        }
    }

    pub fn filled(&self) -> usize {
        self.rewards.len()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.terminated.iter().zip(&self.truncated).map(|(a, b)| *a || *b).collect()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Materialize the per-step windows from the flat arrays.
    pub fn build_windows(&mut self) {
        let (n, h, sd, ad) = (self.filled(), self.horizon, self.state_dim, self.action_dim);
        let dones = self.dones();
        self.state_windows = vec![0.0; n * (h + 1) * sd];
        self.action_windows = vec![0.0; n * h * ad];
        self.mask_windows = vec![false; n * h];
        for t in 0..n {
            // Slots reaching before the buffer start stay zero.
            let pad = h.saturating_sub(t);
            let start = t + pad - h;
            let sw = &mut self.state_windows[t * (h + 1) * sd..(t + 1) * (h + 1) * sd];
            sw[pad * sd..].copy_from_slice(&self.states[start * sd..(t + 1) * sd]);
            let aw = &mut self.action_windows[t * h * ad..(t + 1) * h * ad];
            aw[pad * ad..].copy_from_slice(&self.applied_actions[start * ad..t * ad]);
            if pad == 0 {
                let mask = build_mask(&dones[start..t]);
                self.mask_windows[t * h..(t + 1) * h].copy_from_slice(&mask);
            }
        }
    }

    pub fn window_state(&self, t: usize, j: usize) -> &[f64] {
        let sd = self.state_dim;
        let at = (t * (self.horizon + 1) + j) * sd;
        &self.state_windows[at..at + sd]
    }

    pub fn window_mask(&self, t: usize) -> &[bool] {
        &self.mask_windows[t * self.horizon..(t + 1) * self.horizon]
    }

    /// Step-major window batch for the given step indices.
    pub fn windows(&self, indices: &[usize]) -> Windows {
        let (h, sd, ad) = (self.horizon, self.state_dim, self.action_dim);
        let mut w = Windows::zeros(indices.len(), h, sd, ad);
        for (i, &t) in indices.iter().enumerate() {
            for j in 0..=h {
                w.set_state(i, j, self.window_state(t, j));
            }
            for j in 0..h {
                let at = (t * h + j) * ad;
                w.set_action(i, j, &self.action_windows[at..at + ad]);
            }
            for (j, &bit) in self.window_mask(t).iter().enumerate() {
                w.set_mask(i, j + 1, bit);
            }
        }
        w
    }

    pub fn gae(&self, gamma: f64, lambda: f64) -> GaeOutput {
        compute_gae(&self.gae_rewards, &self.values, &self.dones(), self.bootstrap_value, gamma, lambda)
    }

    /// CSV dump: `step, state.., action.., reward, done`.
    pub fn write_trajectory_csv(&self, path: &Path, first_step: u64) -> Result<(), RolloutError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
        let mut header = vec!["step".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("state_{i}")));
        header.extend((0..self.action_dim).map(|i| format!("action_{i}")));
        header.extend(["reward".to_string(), "done".to_string()]);
        w.write_record(&header).map_err(|e| std::io::Error::other(e.to_string()))?;
        let dones = self.dones();
        for t in 0..self.filled() {
            let mut row = vec![(first_step + t as u64).to_string()];
            row.extend(self.state(t).iter().map(|v| v.to_string()));
            row.extend(self.applied_actions[t * self.action_dim..(t + 1) * self.action_dim].iter().map(|v| v.to_string()));
            row.push(self.rewards[t].to_string());
            row.push(u8::from(dones[t]).to_string());
            w.write_record(&row).map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Persistent interaction state across rollouts: the live observation and
/// the running episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collector {
    pub obs: Vec<f64>,
    pub episode_return: f64,
    pub episode_len: usize,
    pub needs_reset: bool,
}

/// What one rollout produced besides the buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutStats {
    /// Undiscounted returns of episodes that ended during this rollout.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl Default for Collector {
    fn default() -> Self {
        Self::new()
    }
}

impl Collector {
    pub fn new() -> Self {
        Self {
            obs: Vec::new(),
            episode_return: 0.0,
            episode_len: 0,
            needs_reset: true,
        }
    }

    /// Fill a buffer of length `len`. `input` maps an observation to the
    /// actor/critic input (identity or a read-only encoder). Reset seeds are
    /// drawn from `env_rng`, action noise from `action_rng`.
    #[allow(clippy::too_many_arguments)]
    pub fn collect<R1: Rng, R2: Rng>(
        &mut self,
        env: &mut dyn Env,
        store: &ParamStore,
        policy: &GaussianPolicy,
        value_fn: &ValueFunction,
        input: &dyn Fn(&[f64]) -> Result<Vec<f64>, DiffError>,
        len: usize,
        horizon: usize,
        gamma: f64,
        env_rng: &mut R1,
        action_rng: &mut R2,
    ) -> Result<(RolloutBuffer, RolloutStats), RolloutError> {
        let spec = env.spec().clone();
        let mut buf = RolloutBuffer::new(len, horizon, spec.state_dim, spec.action_dim);
        let mut stats = RolloutStats::default();
        for _ in 0..len {
            if self.needs_reset {
                self.obs = env.reset(env_rng.random());
                self.episode_return = 0.0;
                self.episode_len = 0;
                self.needs_reset = false;
            }
            let x = input(&self.obs)?;
            let (sample, value) = act(policy, value_fn, store, &x, action_rng)?;
            let applied = spec.clamp_action(&sample.action);
            let step = env.step(&applied)?;
            let mut gae_reward = step.reward;
            if step.truncated {
                gae_reward += gamma * value_fn.value(store, &input(&step.next_state)?)?;
            }
            buf.states.extend_from_slice(&self.obs);
            buf.actions.extend_from_slice(&sample.action);
            buf.applied_actions.extend_from_slice(&applied);
            buf.rewards.push(step.reward);
            buf.gae_rewards.push(gae_reward);
            buf.terminated.push(step.terminated);
            buf.truncated.push(step.truncated);
            buf.log_probs.push(sample.log_prob);
            buf.values.push(value);
            self.episode_return += step.reward;
            self.episode_len += 1;
            let done = step.done();
            self.obs = step.next_state;
            if done {
                stats.episode_returns.push(self.episode_return);
                stats.episode_lengths.push(self.episode_len);
                self.needs_reset = true;
            }
        }
        buf.bootstrap_value = if self.needs_reset {
            0.0
        } else {
            value_fn.value(store, &input(&self.obs)?)?
        };
        buf.build_windows();
        Ok((buf, stats))
    }
}

#[cfg(test)]
mod tests;

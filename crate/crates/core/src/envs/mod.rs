//! Seedable continuous-control environments.
//!
//! Each environment is a [`Dynamics`] (initial distribution, transition,
//! observation) wrapped in [`Episode`], which owns step counting,
//! truncation, action clamping and the terminal-state contract.

mod cartpole;
mod linpoly;
mod pendulum;

pub use cartpole::CartPole;
pub use linpoly::LinearizablePoly;
pub use pendulum::Pendulum;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment '{0}' (known: cartpole, pendulum, linpoly)")]
    Unknown(String),
    #[error("invalid parameters for '{env}': {msg}")]
    Params { env: String, msg: String },
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("step called before the first reset")]
    NotReset,
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("action component {index} is not finite ({value})")]
    NonFiniteAction { index: usize, value: f64 },
    #[error("snapshot does not fit '{env}': {msg}")]
    Snapshot { env: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    /// Low below 10 total dimensions, medium below 20, high otherwise.
    pub fn complexity(&self) -> Complexity {
        match self.state_dim + self.action_dim {
            n if n < 10 => Complexity::Low,
            n if n < 20 => Complexity::Medium,
            _ => Complexity::High,
        }
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    /// Episode boundary for masking: terminated or truncated.
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Full resumable state of an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub env: String,
    pub state: Vec<f64>,
    pub steps: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NeedsReset,
    Running,
    Finished,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Start a new episode from the initial distribution under `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advance one step. Out-of-bounds actions are clamped to the box.
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError>;
}

/// Physics of one environment, free of episode bookkeeping.
pub trait Dynamics: Send {
    fn spec(&self) -> EnvSpec;
    /// Internal state width (may differ from the observation width).
    fn internal_dim(&self) -> usize;
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// `(next internal state, reward, terminated)` for an in-bounds action.
    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool);
    fn observe(&self, state: &[f64]) -> Vec<f64>;
}

pub struct Episode<D> {
    dynamics: D,
    spec: EnvSpec,
    state: Vec<f64>,
    steps: usize,
    phase: Phase,
}

impl<D: Dynamics> Episode<D> {
    pub fn new(dynamics: D) -> Self {
        let spec = dynamics.spec();
        let state = vec![0.0; dynamics.internal_dim()];
        Self {
            dynamics,
            spec,
            state,
            steps: 0,
            phase: Phase::NeedsReset,
        }
    }

    pub fn dynamics(&self) -> &D {
        &self.dynamics
    }

    /// Internal (unobserved) state.
    pub fn internal_state(&self) -> &[f64] {
        &self.state
    }
}

impl<D: Dynamics> Env for Episode<D> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.dynamics.initial_state(&mut rng);
        self.steps = 0;
        self.phase = Phase::Running;
        self.dynamics.observe(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        match self.phase {
            Phase::NeedsReset => return Err(EnvError::NotReset),
            Phase::Finished => return Err(EnvError::StepAfterDone),
            Phase::Running => {}
        }
        if action.len() != self.spec.action_dim {
            return Err(EnvError::ActionDim {
                expected: self.spec.action_dim,
                got: action.len(),
            });
        }
        if let Some(index) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction {
                index,
                value: action[index],
            });
        }
        let action = self.spec.clamp_action(action);
        let (next, reward, terminated) = self.dynamics.transition(&self.state, &action);
        self.state = next;
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.spec.max_episode_steps;
        if terminated || truncated {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            next_state: self.dynamics.observe(&self.state),
            reward,
            terminated,
            truncated,
        })
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            env: self.spec.name.clone(),
            state: self.state.clone(),
            steps: self.steps,
            phase: self.phase,
        }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError> {
        let fail = |msg: String| EnvError::Snapshot {
            env: self.spec.name.clone(),
            msg,
        };
        if snap.env != self.spec.name {
            return Err(fail(format!("snapshot is for '{}'", snap.env)));
        }
        if snap.state.len() != self.dynamics.internal_dim() {
            return Err(fail(format!(
                "state has {} values, expected {}",
                snap.state.len(),
                self.dynamics.internal_dim()
            )));
        }
        if snap.steps > self.spec.max_episode_steps {
            return Err(fail(format!("step count {} exceeds the episode cap", snap.steps)));
        }
        self.state = snap.state.clone();
        self.steps = snap.steps;
        self.phase = snap.phase;
        Ok(())
    }
}

/// Environment selection plus optional parameter overrides, e.g.
///
/// ```toml
/// [env]
/// name = "linpoly"
/// params = { mu = -0.1 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub params: toml::Table,
}

impl EnvConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: toml::Table::new(),
        }
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(name: &str, params: &toml::Table) -> Result<T, EnvError> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e: toml::de::Error| EnvError::Params {
            env: name.to_string(),
            msg: e.message().to_string(),
        })
}

/// Build an environment from the registry.
pub fn make_env(config: &EnvConfig) -> Result<Box<dyn Env>, EnvError> {
    let name = config.name.as_str();
    let env: Box<dyn Env> = match name {
        "cartpole" => Box::new(Episode::new(parse_params::<CartPole>(name, &config.params)?.validated()?)),
        "pendulum" => Box::new(Episode::new(parse_params::<Pendulum>(name, &config.params)?.validated()?)),
        "linpoly" => Box::new(Episode::new(
            parse_params::<LinearizablePoly>(name, &config.params)?.validated()?,
        )),
        other => return Err(EnvError::Unknown(other.to_string())),
    };
    Ok(env)
}

pub const ENV_NAMES: [&str; 3] = ["cartpole", "pendulum", "linpoly"];

fn invalid(env: &str, msg: impl Into<String>) -> EnvError {
    EnvError::Params {
        env: env.to_string(),
        msg: msg.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_all_names() {
        for name in ENV_NAMES {
            let env = make_env(&EnvConfig::named(name)).unwrap();
            let spec = env.spec();
            assert_eq!(spec.name, name);
            assert!(spec.action_low.iter().zip(&spec.action_high).all(|(l, h)| l < h));
            assert_eq!(spec.complexity(), Complexity::Low);
        }
        assert!(matches!(make_env(&EnvConfig::named("hopper")), Err(EnvError::Unknown(_))));
    }

    #[test]
    fn complexity_thresholds() {
        let mut spec = make_env(&EnvConfig::named("cartpole")).unwrap().spec().clone();
        for (s, a, c) in [(8, 1, Complexity::Low), (9, 1, Complexity::Medium), (17, 2, Complexity::Medium), (17, 3, Complexity::High)] {
            spec.state_dim = s;
            spec.action_dim = a;
            assert_eq!(spec.complexity(), c, "{s}+{a}");
        }
    }

    #[test]
    fn unknown_param_is_rejected_by_name() {
        let mut cfg = EnvConfig::named("linpoly");
        cfg.params.insert("muu".into(), toml::Value::Float(0.1));
        let err = make_env(&cfg).err().unwrap();
        assert!(err.to_string().contains("muu"), "{err}");
    }

    #[test]
    fn step_contract() {
        let mut env = make_env(&EnvConfig::named("linpoly")).unwrap();
        assert_eq!(env.step(&[0.0]), Err(EnvError::NotReset));
        env.reset(3);
        assert!(matches!(env.step(&[0.0, 1.0]), Err(EnvError::ActionDim { .. })));
        assert!(matches!(env.step(&[f64::NAN]), Err(EnvError::NonFiniteAction { .. })));
        let mut last = None;
        for _ in 0..env.spec().max_episode_steps {
            last = Some(env.step(&[0.0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated && last.done());
        assert_eq!(env.step(&[0.0]), Err(EnvError::StepAfterDone));
        env.reset(4);
        assert!(env.step(&[0.0]).is_ok());
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let mut env = make_env(&EnvConfig::named("pendulum")).unwrap();
        env.reset(11);
        for i in 0..17 {
            env.step(&[(i as f64 * 0.3).sin()]).unwrap();
        }
        let snap = env.snapshot();
        let mut other = make_env(&EnvConfig::named("pendulum")).unwrap();
        other.restore(&snap).unwrap();
        for i in 0..30 {
            let a = [(i as f64).cos() * 3.0];
            assert_eq!(env.step(&a).unwrap(), other.step(&a).unwrap());
        }
        let mut wrong = make_env(&EnvConfig::named("cartpole")).unwrap();
        assert!(matches!(wrong.restore(&snap), Err(EnvError::Snapshot { .. })));
    }
}

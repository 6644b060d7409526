use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{invalid, Dynamics, EnvError, EnvSpec};

/// Torque-limited pendulum swing-up. Internal state `(theta, theta_dot)`
/// with theta = 0 upright; observation `(cos theta, sin theta, theta_dot)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pendulum {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub max_episode_steps: usize,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            max_episode_steps: 200,
        }
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn validated(self) -> Result<Self, EnvError> {
        let positive = [self.gravity, self.mass, self.length, self.dt, self.max_speed, self.max_torque];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("pendulum", "physical constants must be positive"));
        }
        if self.max_episode_steps == 0 {
            return Err(invalid("pendulum", "max_episode_steps must be positive"));
        }
        Ok(self)
    }

    pub fn reward(&self, theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let th = wrap_angle(theta);
        -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }
}

impl Dynamics for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "pendulum".into(),
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-self.max_torque],
            action_high: vec![self.max_torque],
            max_episode_steps: self.max_episode_steps,
        }
    }

    fn internal_dim(&self) -> usize {
        2
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-PI..=PI), rng.random_range(-1.0..=1.0)]
    }

    fn transition(&self, s: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (theta, theta_dot) = (s[0], s[1]);
        let u = action[0];
        let reward = self.reward(theta, theta_dot, u);
        let acc = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u;
        let next_theta = theta + self.dt * theta_dot;
        let next_dot = (theta_dot + self.dt * acc).clamp(-self.max_speed, self.max_speed);
        (vec![next_theta, next_dot], reward, false)
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        let (sin, cos) = state[0].sin_cos();
        vec![cos, sin, state[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, Episode};

    #[test]
    fn reset_bounds_by_sampling() {
        let mut env = Episode::new(Pendulum::default());
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for seed in 0..2000 {
            let obs = env.reset(seed);
            let s = env.internal_state();
            assert!(s[0].abs() <= PI && s[1].abs() <= 1.0);
            assert!(((obs[0] * obs[0] + obs[1] * obs[1]) - 1.0).abs() < 1e-12);
            lo = lo.min(s[0]);
            hi = hi.max(s[0]);
        }
        // The draws should reach close to both ends of the interval.
        assert!(lo < -3.0 && hi > 3.0);
    }

    #[test]
    fn upright_at_rest_is_an_equilibrium_with_zero_reward() {
        let p = Pendulum::default();
        let (next, r, done) = p.transition(&[0.0, 0.0], &[0.0]);
        assert_eq!(next, vec![0.0, 0.0]);
        assert_eq!(r, 0.0);
        assert!(!done);
    }

    #[test]
    fn reward_uses_wrapped_angle() {
        let p = Pendulum::default();
        assert!((p.reward(2.0 * PI + 0.5, 0.0, 0.0) - (-0.25)).abs() < 1e-12);
        assert!((p.reward(PI, 2.0, 2.0) - -(PI * PI + 0.4 + 0.004)).abs() < 1e-12);
    }

    #[test]
    fn speed_is_clipped_and_rewards_finite() {
        let mut env = Episode::new(Pendulum::default());
        env.reset(1);
        for _ in 0..200 {
            let r = env.step(&[2.0]).unwrap();
            assert!(r.next_state[2].abs() <= 8.0);
            assert!(r.reward.is_finite());
            assert!(!r.terminated);
        }
    }

    #[test]
    fn truncates_at_200() {
        let mut env = Episode::new(Pendulum::default());
        env.reset(2);
        for t in 1..=200 {
            let r = env.step(&[0.0]).unwrap();
            assert_eq!(r.truncated, t == 200);
        }
    }
}

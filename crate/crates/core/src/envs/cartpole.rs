use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{invalid, Dynamics, EnvError, EnvSpec};

/// Cart-pole with a continuous force. State `(x, x_dot, theta, theta_dot)`,
/// theta measured from upright. Action in `[-1, 1]` scaled by `force_mag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPole {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub max_episode_steps: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            x_threshold: 2.4,
            max_episode_steps: 500,
        }
    }
}

impl CartPole {
    pub fn validated(self) -> Result<Self, EnvError> {
        let positive = [self.gravity, self.mass_cart, self.mass_pole, self.length, self.force_mag, self.tau];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("cartpole", "physical constants must be positive"));
        }
        if self.max_episode_steps == 0 {
            return Err(invalid("cartpole", "max_episode_steps must be positive"));
        }
        Ok(self)
    }
}

impl Dynamics for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "cartpole".into(),
            state_dim: 4,
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            max_episode_steps: self.max_episode_steps,
        }
    }

    fn internal_dim(&self) -> usize {
        4
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect()
    }

    fn transition(&self, s: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
        let force = self.force_mag * action[0];
        let total_mass = self.mass_cart + self.mass_pole;
        let pole_ml = self.mass_pole * self.length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.length * (4.0 / 3.0 - self.mass_pole * cos * cos / total_mass));
        let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
        let next = vec![
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ];
        let terminated = next[0].abs() > self.x_threshold || next[2].abs() > self.theta_threshold;
        (next, 1.0, terminated)
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, Episode};

    #[test]
    fn same_seed_same_start() {
        let mut a = Episode::new(CartPole::default());
        let mut b = Episode::new(CartPole::default());
        assert_eq!(a.reset(1), b.reset(1));
        assert_ne!(a.reset(1), a.reset(2));
        assert!(a.reset(9).iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn threshold_is_twelve_degrees() {
        assert!((CartPole::default().theta_threshold - 0.2095).abs() < 1e-4);
    }

    #[test]
    fn constant_push_topples_the_pole() {
        let mut env = Episode::new(CartPole::default());
        env.reset(0);
        let mut steps = 0;
        loop {
            let r = env.step(&[1.0]).unwrap();
            steps += 1;
            assert_eq!(r.reward, 1.0);
            if r.terminated {
                let s = env.internal_state();
                assert!(s[2].abs() > 0.2095 || s[0].abs() > 2.4);
                break;
            }
            assert!(steps < 500, "pole never fell");
        }
        assert!(steps < 100);
    }

    #[test]
    fn cart_leaving_the_track_terminates() {
        let env = CartPole::default();
        let (_, _, done) = env.transition(&[2.399, 1.0, 0.0, 0.0], &[0.0]);
        assert!(done);
        let (_, _, done) = env.transition(&[0.0, 0.0, 0.0, 0.0], &[0.0]);
        assert!(!done);
    }

    #[test]
    fn actions_are_clamped() {
        let mut a = Episode::new(CartPole::default());
        let mut b = Episode::new(CartPole::default());
        a.reset(5);
        b.reset(5);
        assert_eq!(a.step(&[7.0]).unwrap(), b.step(&[1.0]).unwrap());
    }
}

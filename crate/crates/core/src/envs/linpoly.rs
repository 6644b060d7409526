use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{invalid, Dynamics, EnvError, EnvSpec};

/// `x1' = mu x1`, `x2' = lambda (x2 - x1^2) + u`, Euler-discretized.
///
/// The lifted coordinates `z = (x1, x2, x1^2)` evolve exactly linearly:
/// `z_{t+1} = A_z z_t + B_z u_t` (see [`LinearizablePoly::lifted_matrices`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizablePoly {
    pub mu: f64,
    pub lambda: f64,
    pub dt: f64,
    pub action_bound: f64,
    pub max_episode_steps: usize,
}

impl Default for LinearizablePoly {
    fn default() -> Self {
        Self {
            mu: -0.05,
            lambda: -1.0,
            dt: 0.05,
            action_bound: 1.0,
            max_episode_steps: 200,
        }
    }
}

impl LinearizablePoly {
    pub fn validated(self) -> Result<Self, EnvError> {
        if ![self.mu, self.lambda, self.dt, self.action_bound].iter().all(|v| v.is_finite()) {
            return Err(invalid("linpoly", "parameters must be finite"));
        }
        if self.dt <= 0.0 || self.action_bound <= 0.0 {
            return Err(invalid("linpoly", "dt and action_bound must be positive"));
        }
        if self.max_episode_steps == 0 {
            return Err(invalid("linpoly", "max_episode_steps must be positive"));
        }
        Ok(self)
    }

    /// Lift `x` to `(x1, x2, x1^2)`.
    pub fn lift(x: &[f64]) -> [f64; 3] {
        [x[0], x[1], x[0] * x[0]]
    }

    /// Closed-form `(A_z, B_z)`, row-major 3x3 and 3x1.
    pub fn lifted_matrices(&self) -> ([f64; 9], [f64; 3]) {
        let a = 1.0 + self.dt * self.mu;
        let c = 1.0 + self.dt * self.lambda;
        (
            [a, 0.0, 0.0, 0.0, c, -self.dt * self.lambda, 0.0, 0.0, a * a],
            [0.0, self.dt, 0.0],
        )
    }
}

impl Dynamics for LinearizablePoly {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "linpoly".into(),
            state_dim: 2,
            action_dim: 1,
            action_low: vec![-self.action_bound],
            action_high: vec![self.action_bound],
            max_episode_steps: self.max_episode_steps,
        }
    }

    fn internal_dim(&self) -> usize {
        2
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
    }

    fn transition(&self, s: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (x1, x2) = (s[0], s[1]);
        let reward = -(x1 * x1 + x2 * x2);
        let next = vec![
            x1 + self.dt * self.mu * x1,
            x2 + self.dt * (self.lambda * (x2 - x1 * x1) + action[0]),
        ];
        (next, reward, false)
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
    fn origin_is_fixed() {
        let p = LinearizablePoly::default();
        assert_eq!(p.transition(&[0.0, 0.0], &[0.0]).0, vec![0.0, 0.0]);
    }

    #[test]
    fn euler_rule_by_hand() {
        let p = LinearizablePoly::default();
        let (next, r, _) = p.transition(&[1.0, 1.0], &[0.0]);
        assert!((next[0] - 0.9975).abs() < 1e-15);
        assert!((next[1] - 1.0).abs() < 1e-15);
        assert_eq!(r, -2.0);
    }

    #[test]
    fn reset_is_uniform_on_the_square() {
        // Chi-square over a 4x4 grid, 16000 draws; 15 dof, 99.9% quantile 37.7.
        let mut env = Episode::new(LinearizablePoly::default());
        let mut counts = [0usize; 16];
        let n = 16_000;
        for seed in 0..n {
            let x = env.reset(seed as u64);
            assert!(x.iter().all(|v| v.abs() <= 1.0));
            let cell = |v: f64| (((v + 1.0) / 0.5) as usize).min(3);
            counts[cell(x[0]) * 4 + cell(x[1])] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn lifted_dynamics_are_exactly_linear() {
        let p = LinearizablePoly::default();
        let (a, b) = p.lifted_matrices();
        let mut env = Episode::new(p);
        let mut x = env.reset(42);
        for t in 0..200 {
            let u = (t as f64 * 0.37).sin();
            let z = LinearizablePoly::lift(&x);
            let next = env.step(&[u]).unwrap().next_state;
            let z_next = LinearizablePoly::lift(&next);
            for i in 0..3 {
                let pred: f64 = (0..3).map(|j| a[i * 3 + j] * z[j]).sum::<f64>() + b[i] * u;
                assert!((pred - z_next[i]).abs() <= 1e-12, "t={t} i={i}");
            }
            x = next;
        }
    }
}

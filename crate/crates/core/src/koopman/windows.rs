use crate::diff::{DiffError, Tensor};

/// A batch of prediction windows stored step-major: block `h` holds step
/// `h` of every window, so one block is a contiguous `batch x dim` matrix.
///
/// `states` has `H + 1` blocks (`x_0` is the prediction's initial state,
/// `x_1..x_H` the targets), `actions` and `masks` have `H` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub batch: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub masks: Vec<f64>,
}

impl Windows {
    pub fn zeros(batch: usize, horizon: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            batch,
            horizon,
            state_dim,
            action_dim,
            states: vec![0.0; (horizon + 1) * batch * state_dim],
            actions: vec![0.0; horizon * batch * action_dim],
            masks: vec![0.0; horizon * batch],
        }
    }

    pub fn set_state(&mut self, window: usize, h: usize, x: &[f64]) {
        let at = (h * self.batch + window) * self.state_dim;
        self.states[at..at + self.state_dim].copy_from_slice(x);
    }

    pub fn set_action(&mut self, window: usize, h: usize, u: &[f64]) {
        let at = (h * self.batch + window) * self.action_dim;
        self.actions[at..at + self.action_dim].copy_from_slice(u);
    }

    /// Mask bit for target `h` (1-based, `1..=H`).
    pub fn set_mask(&mut self, window: usize, h: usize, bit: bool) {
        self.masks[(h - 1) * self.batch + window] = if bit { 1.0 } else { 0.0 };
    }

    pub fn state(&self, window: usize, h: usize) -> &[f64] {
        let at = (h * self.batch + window) * self.state_dim;
        &self.states[at..at + self.state_dim]
    }

    pub fn action(&self, window: usize, h: usize) -> &[f64] {
        let at = (h * self.batch + window) * self.action_dim;
        &self.actions[at..at + self.action_dim]
    }

    pub fn mask(&self, window: usize, h: usize) -> bool {
        self.masks[(h - 1) * self.batch + window] != 0.0
    }

    /// True when every target of the window is valid.
    pub fn fully_valid(&self, window: usize) -> bool {
        (1..=self.horizon).all(|h| self.mask(window, h))
    }

    /// All `H + 1` state blocks as one `(H+1)*batch x state_dim` matrix.
    pub fn states_tensor(&self) -> Result<Tensor, DiffError> {
        Tensor::new(vec![(self.horizon + 1) * self.batch, self.state_dim], self.states.clone())
    }

    pub fn actions_tensor(&self) -> Result<Tensor, DiffError> {
        Tensor::new(vec![self.horizon * self.batch, self.action_dim], self.actions.clone())
    }

    /// Keep only the listed windows, preserving their order.
    pub fn select(&self, keep: &[usize]) -> Self {
        let mut out = Self::zeros(keep.len(), self.horizon, self.state_dim, self.action_dim);
        for (j, &i) in keep.iter().enumerate() {
            for h in 0..=self.horizon {
                out.set_state(j, h, self.state(i, h));
            }
            for h in 0..self.horizon {
                out.set_action(j, h, self.action(i, h));
            }
            for h in 1..=self.horizon {
                out.set_mask(j, h, self.mask(i, h));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        let (b, h) = (self.batch, self.horizon);
        let ok = b > 0
            && h > 0
            && self.states.len() == (h + 1) * b * self.state_dim
            && self.actions.len() == h * b * self.action_dim
            && self.masks.len() == h * b;
        if !ok {
            return Err(DiffError::Contract(format!(
                "windows: batch {b}, horizon {h} inconsistent with buffer lengths ({}, {}, {})",
                self.states.len(),
                self.actions.len(),
                self.masks.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_major_layout() {
        let mut w = Windows::zeros(2, 2, 1, 1);
        w.set_state(0, 0, &[1.0]);
        w.set_state(1, 0, &[2.0]);
        w.set_state(0, 2, &[5.0]);
        w.set_mask(1, 2, true);
        assert_eq!(w.states, vec![1.0, 2.0, 0.0, 0.0, 5.0, 0.0]);
        assert_eq!(w.masks, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(!w.fully_valid(1));
        let s = w.select(&[1]);
        assert_eq!(s.states, vec![2.0, 0.0, 0.0]);
        assert!(s.mask(0, 2));
    }
}

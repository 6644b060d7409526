use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    /// Optimizer group, e.g. `koopman`, `actor`, `critic`.
    pub group: String,
    pub tensor: Tensor,
}

/// Owner of every trainable tensor in a run.
///
/// Gradient slots follow a strict zero-then-backward protocol: `zero_grad`
/// arms the store, one backward pass consumes it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    armed: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, mut tensor: Tensor) -> ParamId {
        tensor.set_requires_grad(true);
        tensor.clear_grad();
        self.params.push(Param {
            name: name.into(),
            group: group.into(),
            tensor,
        });
        self.armed = false;
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    /// Zero every gradient slot and allow exactly one backward pass.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
        self.armed = true;
    }

    pub(crate) fn begin_backward(&mut self) -> Result<(), DiffError> {
        if !self.armed {
            return Err(DiffError::GradNotZeroed);
        }
        self.armed = false;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let slot = self.params[id.0]
            .tensor
            .grad_mut()
            .expect("zero_grad allocates every slot");
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    /// Flat copy of every parameter value, in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.tensor.data().iter().copied()).collect()
    }

    pub fn check_finite(&self) -> Result<(), DiffError> {
        self.params.iter().try_for_each(|p| p.tensor.check_finite(&p.name))
    }

    /// Replace all values from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), DiffError> {
        if other.params.len() != self.params.len() {
            return Err(DiffError::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(DiffError::Contract(format!(
                    "parameter layout mismatch at '{}'",
                    mine.name
                )));
            }
            mine.tensor.assign(theirs.tensor.data())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_keep_registration_order() {
        let mut store = ParamStore::new();
        store.add("a", "koopman", Tensor::zeros(&[1, 1]));
        store.add("b", "actor", Tensor::zeros(&[1, 1]));
        store.add("c", "koopman", Tensor::zeros(&[1, 1]));
        assert_eq!(store.groups(), vec!["koopman", "actor"]);
        assert_eq!(store.group_ids("koopman"), vec![ParamId(0), ParamId(2)]);
    }

    #[test]
    fn backward_requires_fresh_zero_grad() {
        let mut store = ParamStore::new();
        store.add("a", "g", Tensor::zeros(&[1, 1]));
        assert_eq!(store.begin_backward(), Err(DiffError::GradNotZeroed));
        store.zero_grad();
        assert!(store.begin_backward().is_ok());
        assert_eq!(store.begin_backward(), Err(DiffError::GradNotZeroed));
    }
}

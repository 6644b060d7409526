//! Tanh multilayer perceptrons: `tanh` on hidden layers, identity on the output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::gemm;
use super::{init_matrix, DiffError, Graph, InitKind, ParamId, ParamStore, Tensor, Var};

/// Fixed, parameter-free features computed from the raw input before the
/// first layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InputFeatures {
    #[default]
    Raw,
    /// Append `x[i]^2` for each listed column. Lets hand-set weights realize
    /// polynomial observables exactly (used by the lifted-dynamics fixtures).
    AppendSquares(Vec<usize>),
}

impl InputFeatures {
    fn width(&self, raw: usize) -> usize {
        match self {
            InputFeatures::Raw => raw,
            InputFeatures::AppendSquares(cols) => raw + cols.len(),
        }
    }
}

/// Ordered `(weight, bias)` pairs. Weights are stored `out x in`, biases `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub input_dim: usize,
    pub features: InputFeatures,
}

impl Mlp {
    /// Register a network with layer widths `sizes = [in, hidden.., out]`.
    /// Weights use `init`, biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        sizes: &[usize],
        init: InitKind,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        Self::with_features(store, name, group, sizes, InputFeatures::Raw, init, rng)
    }

    pub fn with_features<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        sizes: &[usize],
        features: InputFeatures,
        init: InitKind,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        if sizes.len() < 2 {
            return Err(DiffError::Contract(format!(
                "{name}: an MLP needs at least input and output sizes, got {sizes:?}"
            )));
        }
        let mut widths = sizes.to_vec();
        widths[0] = features.width(sizes[0]);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = init_matrix(init, fan_out, fan_in, rng)?;
            let wid = store.add(format!("{name}.{l}.weight"), group, w);
            let bid = store.add(format!("{name}.{l}.bias"), group, Tensor::zeros(&[fan_out]));
            layers.push((wid, bid));
        }
        Ok(Self {
            layers,
            input_dim: sizes[0],
            features,
        })
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        let (w, _) = self.layers[self.layers.len() - 1];
        store.get(w).shape()[0]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    fn check_input(&self, width: usize) -> Result<(), DiffError> {
        if width != self.input_dim {
            return Err(DiffError::LayerInput {
                layer: 0,
                expected: self.input_dim,
                got: width,
            });
        }
        Ok(())
    }

    /// Recorded forward pass over a `batch x in` node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        self.check_input(g.dims(x).1)?;
        let mut h = match &self.features {
            InputFeatures::Raw => x,
            InputFeatures::AppendSquares(cols) => {
                let mut parts = vec![x];
                for &c in cols {
                    let col = g.slice_cols(x, c, 1)?;
                    parts.push(g.square(col));
                }
                g.concat_cols(&parts)?
            }
        };
        let last = self.layers.len() - 1;
        for (l, &(wid, bid)) in self.layers.iter().enumerate() {
            let w = g.param(store, wid)?;
            let b = g.param(store, bid)?;
            let fan_in = g.dims(w).1;
            if g.dims(h).1 != fan_in {
                return Err(DiffError::LayerInput {
                    layer: l,
                    expected: fan_in,
                    got: g.dims(h).1,
                });
            }
            let z = g.matmul_t(h, false, w, true)?;
            let z = g.add_row(z, b)?;
            h = if l < last { g.tanh(z) } else { z };
        }
        Ok(h)
    }

    /// Forward pass without recording, on a `batch x in` tensor.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor, DiffError> {
        let (batch, width) = x.dims2()?;
        self.check_input(width)?;
        let mut h: Vec<f64> = match &self.features {
            InputFeatures::Raw => x.data().to_vec(),
            InputFeatures::AppendSquares(cols) => (0..batch)
                .flat_map(|i| {
                    let row = x.row(i);
                    row.iter().copied().chain(cols.iter().map(|&c| row[c] * row[c])).collect::<Vec<_>>()
                })
                .collect(),
        };
        let mut width = self.features.width(width);
        let last = self.layers.len() - 1;
        for (l, &(wid, bid)) in self.layers.iter().enumerate() {
            let w = store.get(wid);
            let (fan_out, fan_in) = w.dims2()?;
            if width != fan_in {
                return Err(DiffError::LayerInput {
                    layer: l,
                    expected: fan_in,
                    got: width,
                });
            }
            let bias = store.get(bid).data();
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            gemm(&h, (batch, fan_in), false, w.data(), (fan_out, fan_in), true, 1.0, &mut z);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
            width = fan_out;
        }
        Tensor::new(vec![batch, width], h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, id: ParamId, values: &[f64]) {
        store.get_mut(id).assign(values).unwrap();
    }

    #[test]
    fn identity_output_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "id", "g", &[2, 2], InitKind::XavierUniform, &mut rng).unwrap();
        set(&mut store, mlp.layers[0].0, &[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!(mlp.eval(&store, &x).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn tanh_hidden_layer_fixes_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "z", "g", &[1, 1, 1], InitKind::XavierUniform, &mut rng).unwrap();
        set(&mut store, mlp.layers[0].0, &[1.0]);
        set(&mut store, mlp.layers[1].0, &[1.0]);
        let x = Tensor::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(mlp.eval(&store, &x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn wrong_input_width_names_the_layer() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", "g", &[3, 4, 2], InitKind::XavierUniform, &mut rng).unwrap();
        let x = Tensor::zeros(&[5, 2]);
        assert_eq!(
            mlp.eval(&store, &x),
            Err(DiffError::LayerInput {
                layer: 0,
                expected: 3,
                got: 2
            })
        );
    }

    /// Straight-line evaluation written without any of the crate's kernels.
    fn reference_forward(store: &ParamStore, mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for (l, &(wid, bid)) in mlp.layers.iter().enumerate() {
            let w = store.get(wid);
            let (rows, cols) = (w.shape()[0], w.shape()[1]);
            let b = store.get(bid).data();
            let mut next = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = b[i];
                for j in 0..cols {
                    acc += w.data()[i * cols + j] * h[j];
                }
                next[i] = if l + 1 < mlp.layers.len() { acc.tanh() } else { acc };
            }
            h = next;
        }
        h
    }

    #[test]
    fn random_network_matches_straight_line_reference() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::new(&mut store, "r", "g", &[2, 8, 2], InitKind::XavierUniform, &mut rng).unwrap();
        for id in mlp.param_ids() {
            let t = store.get_mut(id);
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let fast = mlp.eval(&store, &x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(&x).unwrap();
        let taped = mlp.forward(&mut g, &store, xv).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let expect = reference_forward(&store, &mlp, row);
            for (j, e) in expect.iter().enumerate() {
                let rel = |v: f64| (v - e).abs() / e.abs().max(1e-300);
                assert!(rel(fast.row(i)[j]) <= 1e-12);
                assert!(rel(g.value(taped)[i * 2 + j]) <= 1e-12);
            }
        }
    }

    #[test]
    fn squared_features_extend_first_layer() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::with_features(
            &mut store,
            "q",
            "g",
            &[2, 3],
            InputFeatures::AppendSquares(vec![0]),
            InitKind::XavierUniform,
            &mut rng,
        )
        .unwrap();
        let eye = Tensor::identity(3);
        set(&mut store, mlp.layers[0].0, eye.data());
        let x = Tensor::from_rows(&[vec![0.5, -2.0], vec![-3.0, 1.0]]).unwrap();
        let out = mlp.eval(&store, &x).unwrap();
        assert_eq!(out.data(), &[0.5, -2.0, 0.25, -3.0, 1.0, 9.0]);
        let mut g = Graph::new();
        let xv = g.constant(&x).unwrap();
        let y = mlp.forward(&mut g, &store, xv).unwrap();
        assert_eq!(g.value(y), out.data());
    }
}

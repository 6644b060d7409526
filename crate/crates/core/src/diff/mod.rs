//! Dense tensors, a reverse-mode tape, initializers and Adam.
//!
//! Everything trainable lives in a [`ParamStore`]. Forward passes are
//! recorded on a [`Graph`]; [`Graph::backward`] writes gradients into the
//! store's gradient slots. Gradients must be zeroed with
//! [`ParamStore::zero_grad`] before every backward pass: a second backward
//! without a reset is rejected rather than accumulated.

mod adam;
pub mod gradcheck;
mod graph;
mod init;
mod kernels;
mod mlp;
mod params;
pub mod rng;
mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use init::{init_matrix, InitKind};
pub use kernels::matmul;
pub use mlp::{InputFeatures, Mlp};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("expected a 2-D tensor, got shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("layer {layer}: expected input width {expected}, got {got}")]
    LayerInput {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("gradients were not zeroed since the last backward pass")]
    GradNotZeroed,
    #[error("parameter '{0}' has no gradient")]
    MissingGrad(String),
    #[error("orthogonal initialization needs a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite value {value} in {what} at index {index}")]
    NonFinite {
        what: String,
        index: usize,
        value: f64,
    },
    #[error("{0}")]
    Contract(String),
}

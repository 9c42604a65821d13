//! Reverse-mode differentiation over dense `f64` tensors, with the layers and
//! optimizer used by the topic models.

mod graph;
pub mod nn;
pub mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{BatchStats, Gradients, Graph, Var, BATCHNORM_EPS};
pub use optim::{clip_gradients, kl_anneal_weight, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

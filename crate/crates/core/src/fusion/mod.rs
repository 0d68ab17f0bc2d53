//! Text/image fusion layers in 64-bit floats with reverse-mode gradients.
//!
//! Two fusion styles are covered. Selective attention lets text states query
//! (projected) image-patch features and mixes the result back into the text
//! through an elementwise sigmoid gate. Concatenation fusion stacks text
//! and projected image rows and lets every stacked row attend over the text.
//!
//! Everything is built on [`Graph`], so any composition of these layers can
//! be differentiated and checked against finite differences (see [`check`]).

pub mod check;
mod graph;
mod layers;
mod tensor;

use thiserror::Error;

pub use graph::{layer_norm_rows, sigmoid, softmax_rows, Gradients, Graph, Var};
pub use layers::*;
pub use tensor::Tensor2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("dimension {0} must be even")]
    OddDimension(usize),
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("model dimension {d} is not heads ({heads}) x key dimension ({d_k})")]
    Heads { d: usize, heads: usize, d_k: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("variable was not recorded on this graph")]
    NotRecorded,
    #[error("{0}")]
    Mode(String),
}

pub type Result<T> = std::result::Result<T, FusionError>;

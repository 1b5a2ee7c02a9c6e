//! Dense-array computation graphs with reverse-mode differentiation.
//!
//! Graphs are built either lazily ([`Graph`], evaluated later against a
//! [`ParamStore`] and input [`Bindings`]) or eagerly ([`Tape`], where each
//! node is computed as it is pushed). Both record the same primitive
//! [`Op`]s, so gradients, finite-difference checks and re-evaluation work
//! identically on either.

mod check;
mod graph;
pub mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use check::{check_with, finite_diff_check, relative_error, CheckOptions, GradientReport};
pub use graph::{Activation, Axis, Bindings, Builder, Evaluation, Gradients, Graph, NodeId, Op};
pub use layers::{causal_conv, gru_step, init_causal_conv, init_gru, init_mlp, mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamStore, PARAM_MAGIC, PARAM_VERSION};
pub use tape::Tape;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("tensor rank {0} is not supported (at most 2)")]
    Rank(usize),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("parameter `{0}` is missing from the store")]
    MissingParam(String),
    #[error("output has shape {0:?}; a single scalar is required")]
    NotScalar(Vec<usize>),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("gradient check produced NaN for `{0}`")]
    NanGradient(String),
    #[error("parameter snapshot: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

//! Ordering policies. A policy maps an [`Observation`], expressed as nodes
//! on the rollout tape, to a `[batch, 1]` column of nonnegative orders, so
//! the same code serves plain evaluation and differentiable training.

mod basestock;
mod neural;
mod simple;

use thiserror::Error;

use crate::engine::{EngineError, NodeId, ParamStore, Tape};

pub use basestock::{critical_ratio, fit_base_stock, BaseStockPolicy, NoisyBaseStock};
pub use neural::{
    train_direct_backprop, DbpConfig, DbpRecord, DbpReport, NeuralPolicy, PolicyHyper, POLICY_BUNDLE_VERSION,
};
pub use simple::{ConstantPolicy, OpenLoopPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy has no entry for product {0}")]
    UnknownProduct(usize),
    #[error("feature dimension {got} does not match trained dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("invalid policy setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("policy training: {0}")]
    Training(String),
    #[error("policy bundle: {0}")]
    Bundle(String),
}

/// One past period as seen by the policy; every node is `[batch, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct PeriodObs {
    pub demand: NodeId,
    pub action: NodeId,
    pub received: NodeId,
    pub holiday: NodeId,
}

/// Decision-time view of a batch of products at period `t`. Quantities are
/// in units; `window` holds the most recent periods, oldest first, padded
/// with zeros before the start of the rollout.
#[derive(Clone, Debug)]
pub struct Observation {
    pub t: usize,
    pub products: Vec<usize>,
    pub inventory: NodeId,
    pub outstanding: NodeId,
    pub window: Vec<PeriodObs>,
    pub holiday_distance: NodeId,
    pub price: NodeId,
    pub cost: NodeId,
}

impl Observation {
    pub fn batch(&self) -> usize {
        self.products.len()
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    /// Number of past periods the policy reads.
    fn window(&self) -> usize {
        0
    }

    fn params(&self) -> &ParamStore<f64>;

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError>;
}

/// Per-product values as a `[batch, 1]` constant.
pub(crate) fn column_for<B: crate::engine::Builder<f64>>(
    b: &mut B,
    products: &[usize],
    values: &[f64],
) -> Result<NodeId, PolicyError> {
    let col = products
        .iter()
        .map(|&i| values.get(i).copied().ok_or(PolicyError::UnknownProduct(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(b.constant(crate::engine::Tensor::column(col)))
}

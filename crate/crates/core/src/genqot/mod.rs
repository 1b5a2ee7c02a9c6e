//! Autoregressive model of an order's arrival classes given the ordering
//! context and the raw order quantity, trained with teacher forcing and
//! sampled ancestrally for simulation.

mod features;
mod model;
mod oracle;
mod quantiles;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, OptimizerKind};
use crate::grid::GridError;

pub use features::{FeatureSpec, Features, NormStats};
pub use model::{
    clamp_share, encode_for_model, GenQotModel, SampledSequence, TrainExample, TrainingRecord, MODEL_BUNDLE_VERSION,
};
pub use oracle::{estimate_arrival_tv, truth_distribution, TvReport};
pub use quantiles::{lead_time_samples, vlt_quantiles_from_samples, LeadQuantiles};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenQotError {
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("feature dimension {got} does not match model dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("prefix of {got} tokens exceeds the maximum sequence length {max}")]
    PrefixTooLong { got: usize, max: usize },
    #[error("sequence must end with the sentinel")]
    MissingSentinel,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("world is not enumerable: {0}; use a sampling-based bound")]
    NotEnumerable(String),
    #[error("all samples have zero arrivals")]
    NoArrivals,
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    CausalConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenQotHyper {
    pub encoder: EncoderKind,
    pub conv_channels: usize,
    pub dilations: Vec<usize>,
    pub recurrent_layers: usize,
    pub recurrent_width: usize,
    pub mlp_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Class tokens per sequence before a forced stop; `None` means `L + 1`.
    pub max_len: Option<usize>,
    /// Past periods in the context; `None` means `2 L`.
    pub history_window: Option<usize>,
}

impl GenQotHyper {
    pub fn paper() -> Self {
        Self {
            encoder: EncoderKind::CausalConv,
            conv_channels: 32,
            dilations: vec![1, 2, 4, 8, 16],
            recurrent_layers: 2,
            recurrent_width: 512,
            mlp_width: 512,
            learning_rate: 1e-4,
            epochs: 500,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            max_len: None,
            history_window: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            encoder: EncoderKind::CausalConv,
            conv_channels: 8,
            dilations: vec![1, 2],
            recurrent_layers: 1,
            recurrent_width: 32,
            mlp_width: 64,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            max_len: None,
            history_window: None,
        }
    }

    pub fn validate(&self) -> Result<(), GenQotError> {
        let bad = |m: &str| Err(GenQotError::Hyper(m.into()));
        if self.recurrent_layers == 0 {
            return bad("at least one recurrent layer is required");
        }
        if self.recurrent_width == 0 || self.mlp_width == 0 {
            return bad("layer widths must be positive");
        }
        if self.encoder == EncoderKind::CausalConv && (self.dilations.is_empty() || self.conv_channels == 0) {
            return bad("causal-conv encoder needs at least one layer and channel");
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be positive");
        }
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return bad("learning rate must be nonnegative and batch size positive");
        }
        if self.max_len == Some(0) {
            return bad("maximum sequence length must be positive");
        }
        Ok(())
    }
}

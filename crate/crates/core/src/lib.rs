//! Inventory simulation with learned order-arrival dynamics.
//!
//! The numeric core ([`engine`], [`sim::inventory_step`], the metrics) is
//! generic over [`scalar::Scalar`]; the aliases below fix it to `f64`,
//! which is what the models, datasets and command line use.

pub mod dataset;
pub mod engine;
pub mod evaluation;
pub mod genqot;
pub mod grid;
pub mod metrics;
pub mod policy;
pub mod postprocess;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod sim;
pub mod world;

pub use scalar::Scalar;

pub type Tensor = engine::Tensor<f64>;
pub type ParamStore = engine::ParamStore<f64>;
pub type Graph = engine::Graph<f64>;
pub type Gradients = engine::Gradients<f64>;
pub type Tape<'a> = engine::Tape<'a, f64>;
pub type StepOutcome = sim::StepOutcome<f64>;

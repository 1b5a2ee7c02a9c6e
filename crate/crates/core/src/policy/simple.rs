use crate::engine::{Builder, NodeId, ParamStore, Tape, Tensor};

use super::{Observation, Policy, PolicyError};

/// Orders the same quantity every period.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    quantity: f64,
    empty: ParamStore<f64>,
}

impl ConstantPolicy {
    pub fn new(quantity: f64) -> Self {
        Self {
            quantity: quantity.max(0.0),
            empty: ParamStore::new(),
        }
    }
}

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.empty
    }

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError> {
        Ok(tape.constant(Tensor::filled(&[obs.batch(), 1], self.quantity)))
    }
}

/// Fixed order schedule per product: `actions[product][t]`, zero past the end.
#[derive(Clone, Debug)]
pub struct OpenLoopPolicy {
    actions: Vec<Vec<f64>>,
    empty: ParamStore<f64>,
}

impl OpenLoopPolicy {
    pub fn new(actions: Vec<Vec<f64>>) -> Self {
        Self {
            actions,
            empty: ParamStore::new(),
        }
    }
}

impl Policy for OpenLoopPolicy {
    fn name(&self) -> &str {
        "open_loop"
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.empty
    }

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError> {
        let col = obs
            .products
            .iter()
            .map(|&i| {
                let row = self.actions.get(i).ok_or(PolicyError::UnknownProduct(i))?;
                Ok(row.get(obs.t).copied().unwrap_or(0.0).max(0.0))
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        Ok(tape.constant(Tensor::column(col)))
    }
}

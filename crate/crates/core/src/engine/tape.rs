use crate::scalar::Scalar;

use super::graph::{backward, forward, Bindings, Builder, Evaluation, Graph, Gradients, NodeId, Op};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::EngineError;

/// Eagerly evaluated graph: every pushed node is computed immediately so
/// host code can branch on forward values (sampling, scheduling) while the
/// recorded graph stays available for gradients and re-evaluation.
///
/// The first failure is latched; later nodes are filled with zeros and
/// every accessor reports the original error.
pub struct Tape<'p, T: Scalar> {
    graph: Graph<T>,
    values: Vec<Tensor<T>>,
    params: &'p ParamStore<T>,
    bindings: Bindings<T>,
    error: Option<EngineError>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self::with_bindings(params, Bindings::new())
    }

    pub fn with_bindings(params: &'p ParamStore<T>, bindings: Bindings<T>) -> Self {
        Self {
            graph: Graph::new(),
            values: Vec::new(),
            params,
            bindings,
            error: None,
        }
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>, EngineError> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(&self.values[id.index()]),
        }
    }

    /// Column of a `rows x 1` (or any) node flattened into host values.
    pub fn values_of(&self, id: NodeId) -> Result<Vec<T>, EngineError> {
        self.value(id).map(|t| t.data().to_vec())
    }

    pub fn check(&self) -> Result<(), EngineError> {
        self.error.clone().map_or(Ok(()), Err)
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn bindings(&self) -> &Bindings<T> {
        &self.bindings
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn gradient(&self, output: NodeId) -> Result<Gradients<T>, EngineError> {
        self.check()?;
        backward(self.graph.nodes(), &self.values, output, self.params)
    }

    /// Re-evaluates the recorded graph under different parameters. Host-side
    /// decisions made while recording stay frozen as constants.
    pub fn replay(&self, params: &ParamStore<T>) -> Result<Evaluation<T>, EngineError> {
        self.check()?;
        self.graph.evaluate(params, &self.bindings)
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }
}

impl<T: Scalar> Builder<T> for Tape<'_, T> {
    fn push(&mut self, op: Op<T>) -> NodeId {
        let index = self.graph.len();
        let value = if self.error.is_none() {
            match forward(index, &op, &self.values, self.params, &self.bindings) {
                Ok(v) => v,
                Err(e) => {
                    self.error = Some(e);
                    Tensor::scalar(T::zero())
                }
            }
        } else {
            Tensor::scalar(T::zero())
        };
        self.values.push(value);
        self.graph.push(op)
    }
}

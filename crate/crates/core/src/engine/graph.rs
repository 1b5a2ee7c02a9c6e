//! Computation graph, forward evaluation and reverse-mode gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::EngineError;

/// Named input arrays bound for one evaluation.
pub type Bindings<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Primitive operations. Binary elementwise operations broadcast
/// singleton rows/columns the same way numpy does for matrices.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Input(String),
    Param(String),
    Constant(Tensor<T>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `scale * x + shift`, elementwise.
    Affine { x: NodeId, scale: T, shift: T },
    Activate(NodeId, Activation),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise log-softmax.
    LogSoftmax(NodeId),
    Log(NodeId),
    /// Sum of every element, `1 x 1`.
    Sum(NodeId),
    /// Column sums, `1 x cols`.
    SumRows(NodeId),
    /// Row sums, `rows x 1`.
    SumCols(NodeId),
    /// Elementwise maximum; ties route the gradient to the first operand.
    Max(NodeId, NodeId),
    /// Elementwise minimum; ties route the gradient to the first operand.
    Min(NodeId, NodeId),
    Concat { parts: Vec<NodeId>, axis: Axis },
    Slice {
        x: NodeId,
        axis: Axis,
        start: usize,
        len: usize,
    },
    StopGradient(NodeId),
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Activate(..) => "activate",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::Max(..) => "max",
            Op::Min(..) => "min",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::StopGradient(_) => "stop_gradient",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Constant(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::Max(a, b)
            | Op::Min(a, b) => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Activate(x, _)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::SumRows(x)
            | Op::SumCols(x)
            | Op::Slice { x, .. }
            | Op::StopGradient(x) => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

/// Node-construction surface shared by [`Graph`] (deferred) and
/// [`Tape`](super::Tape) (eager).
pub trait Builder<T: Scalar> {
    fn push(&mut self, op: Op<T>) -> NodeId;

    fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }
    fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Param(name.to_string()))
    }
    fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant(value))
    }
    fn scalar(&mut self, value: T) -> NodeId {
        self.constant(Tensor::scalar(value))
    }
    fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }
    fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }
    fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }
    fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }
    fn affine(&mut self, x: NodeId, scale: T, shift: T) -> NodeId {
        self.push(Op::Affine { x, scale, shift })
    }
    fn scale(&mut self, x: NodeId, scale: T) -> NodeId {
        self.affine(x, scale, T::zero())
    }
    fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -T::one(), T::zero())
    }
    fn activate(&mut self, x: NodeId, f: Activation) -> NodeId {
        self.push(Op::Activate(x, f))
    }
    fn relu(&mut self, x: NodeId) -> NodeId {
        self.activate(x, Activation::Relu)
    }
    fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activate(x, Activation::Sigmoid)
    }
    fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activate(x, Activation::Tanh)
    }
    fn softplus(&mut self, x: NodeId) -> NodeId {
        self.activate(x, Activation::Softplus)
    }
    fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x))
    }
    fn log_softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(x))
    }
    fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log(x))
    }
    fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }
    fn sum_rows(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumRows(x))
    }
    fn sum_cols(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumCols(x))
    }
    fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Max(a, b))
    }
    fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Min(a, b))
    }
    fn concat(&mut self, parts: Vec<NodeId>, axis: Axis) -> NodeId {
        self.push(Op::Concat { parts, axis })
    }
    fn slice(&mut self, x: NodeId, axis: Axis, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice {
            x,
            axis,
            start,
            len,
        })
    }
    fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        self.push(Op::StopGradient(x))
    }

    /// `x W + b` with parameters `{prefix}.w` and `{prefix}.b`.
    fn dense(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Summed softmax cross-entropy `-sum(target * log_softmax(logits))`.
    fn softmax_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        let lsm = self.log_softmax(logits);
        let picked = self.mul(target, lsm);
        let total = self.sum(picked);
        self.neg(total)
    }
}

/// A directed acyclic graph of primitive operations. Nodes can only refer
/// to nodes created before them, so insertion order is a valid evaluation
/// order.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Op<T>>,
    outputs: BTreeMap<String, NodeId>,
}

impl<T: Scalar> Builder<T> for Graph<T> {
    fn push(&mut self, op: Op<T>) -> NodeId {
        for operand in op.operands() {
            assert!(
                operand.0 < self.nodes.len(),
                "operand {} does not precede node {}",
                operand.0,
                self.nodes.len()
            );
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0]
    }

    /// Registers `id` as a named output of [`Graph::evaluate`].
    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    /// Names of parameters referenced by the graph, sorted.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|op| match op {
                Op::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn evaluate(
        &self,
        params: &ParamStore<T>,
        bindings: &Bindings<T>,
    ) -> Result<Evaluation<T>, EngineError> {
        let mut values = Vec::with_capacity(self.nodes.len());
        for (index, op) in self.nodes.iter().enumerate() {
            let value = forward(index, op, &values, params, bindings)?;
            values.push(value);
        }
        Ok(Evaluation {
            values,
            outputs: self.outputs.clone(),
        })
    }

    /// Value of a scalar node and its gradient with respect to every
    /// parameter in `params`.
    pub fn gradient(
        &self,
        params: &ParamStore<T>,
        bindings: &Bindings<T>,
        output: NodeId,
    ) -> Result<Gradients<T>, EngineError> {
        let eval = self.evaluate(params, bindings)?;
        backward(&self.nodes, &eval.values, output, params)
    }

    pub(crate) fn nodes(&self) -> &[Op<T>] {
        &self.nodes
    }
}

/// Forward values of every node of one evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    values: Vec<Tensor<T>>,
    outputs: BTreeMap<String, NodeId>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn output(&self, name: &str) -> Option<&Tensor<T>> {
        self.outputs.get(name).map(|id| &self.values[id.0])
    }

    pub fn outputs(&self) -> BTreeMap<String, Tensor<T>> {
        self.outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.values[id.0].clone()))
            .collect()
    }
}

/// Scalar objective value together with per-parameter gradients.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub value: T,
    pub params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Accumulates `other` into `self` (values and gradients).
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        self.value += other.value;
        for (name, g) in &other.params {
            match self.params.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => {
                    self.params.insert(name.clone(), g.clone());
                }
            }
        }
    }

    /// Euclidean norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|g| g.data().iter().map(|x| x.as_f64() * x.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        self.value *= factor;
        for g in self.params.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }
}

fn shape_err(node: usize, op: &'static str, detail: String) -> EngineError {
    EngineError::Shape { node, op, detail }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let pick = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some((pick(a.0, b.0)?, pick(a.1, b.1)?))
}

#[inline]
fn bidx(dims: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if dims.0 == 1 { 0 } else { r };
    let cc = if dims.1 == 1 { 0 } else { c };
    rr * dims.1 + cc
}

fn zip_broadcast<T: Scalar>(
    node: usize,
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, EngineError> {
    let (ad, bd) = (a.dims(), b.dims());
    let out = broadcast_dims(ad, bd)
        .ok_or_else(|| shape_err(node, op, format!("cannot broadcast {ad:?} with {bd:?}")))?;
    let mut data = Vec::with_capacity(out.0 * out.1);
    let (ax, bx) = (a.data(), b.data());
    if ad == bd {
        data.extend(ax.iter().zip(bx).map(|(&x, &y)| f(x, y)));
    } else {
        for r in 0..out.0 {
            for c in 0..out.1 {
                data.push(f(ax[bidx(ad, r, c)], bx[bidx(bd, r, c)]));
            }
        }
    }
    Tensor::matrix(out.0, out.1, data)
}

/// Sums a broadcast gradient back down to `target` dims.
fn reduce_to<T: Scalar>(g: &Tensor<T>, target: (usize, usize)) -> Tensor<T> {
    let gd = g.dims();
    if gd == target {
        return Tensor::matrix(target.0, target.1, g.data().to_vec()).expect("dims match");
    }
    let mut out = vec![T::zero(); target.0 * target.1];
    for r in 0..gd.0 {
        for c in 0..gd.1 {
            out[bidx(target, r, c)] += g.data()[r * gd.1 + c];
        }
    }
    Tensor::matrix(target.0, target.1, out).expect("dims match")
}

fn matmul_raw<T: Scalar>(
    a: &[T],
    (m, k): (usize, usize),
    b: &[T],
    n: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = t.dims();
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, data).expect("transpose dims")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn activate<T: Scalar>(f: Activation, x: T) -> T {
    match f {
        Activation::Identity => x,
        Activation::Relu => x.max(T::zero()),
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Softplus => softplus(x),
        Activation::Exp => x.exp(),
        Activation::Square => x * x,
    }
}

fn activate_grad<T: Scalar>(f: Activation, x: T, y: T) -> T {
    match f {
        Activation::Identity => T::one(),
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Tanh => T::one() - y * y,
        Activation::Softplus => sigmoid(x),
        Activation::Exp => y,
        Activation::Square => T::two() * x,
    }
}

fn row_softmax<T: Scalar>(x: &Tensor<T>, log: bool) -> Tensor<T> {
    let (r, c) = x.dims();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row_slice(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        if log {
            let lz = z.ln() + m;
            data.extend(row.iter().map(|&v| v - lz));
        } else {
            data.extend(row.iter().map(|&v| (v - m).exp() / z));
        }
    }
    Tensor::matrix(r, c, data).expect("softmax dims")
}

pub(crate) fn forward<T: Scalar>(
    index: usize,
    op: &Op<T>,
    values: &[Tensor<T>],
    params: &ParamStore<T>,
    bindings: &Bindings<T>,
) -> Result<Tensor<T>, EngineError> {
    let name = op.name();
    let v = |id: &NodeId| &values[id.0];
    let out = match op {
        Op::Input(key) => bindings
            .get(key)
            .cloned()
            .ok_or_else(|| EngineError::UnboundInput(key.clone()))?,
        Op::Param(key) => params
            .get(key)
            .cloned()
            .ok_or_else(|| EngineError::MissingParam(key.clone()))?,
        Op::Constant(t) => t.clone(),
        Op::Add(a, b) => zip_broadcast(index, name, v(a), v(b), |x, y| x + y)?,
        Op::Sub(a, b) => zip_broadcast(index, name, v(a), v(b), |x, y| x - y)?,
        Op::Mul(a, b) => zip_broadcast(index, name, v(a), v(b), |x, y| x * y)?,
        Op::Max(a, b) => zip_broadcast(index, name, v(a), v(b), |x, y| if x >= y { x } else { y })?,
        Op::Min(a, b) => zip_broadcast(index, name, v(a), v(b), |x, y| if x <= y { x } else { y })?,
        Op::MatMul(a, b) => {
            let (ad, bd) = (v(a).dims(), v(b).dims());
            if ad.1 != bd.0 {
                return Err(shape_err(
                    index,
                    name,
                    format!("inner dimensions differ: {ad:?} x {bd:?}"),
                ));
            }
            Tensor::matrix(ad.0, bd.1, matmul_raw(v(a).data(), ad, v(b).data(), bd.1))?
        }
        Op::Affine { x, scale, shift } => {
            let (r, c) = v(x).dims();
            Tensor::matrix(r, c, v(x).data().iter().map(|&e| *scale * e + *shift).collect())?
        }
        Op::Activate(x, f) => {
            let (r, c) = v(x).dims();
            Tensor::matrix(r, c, v(x).data().iter().map(|&e| activate(*f, e)).collect())?
        }
        Op::Softmax(x) => row_softmax(v(x), false),
        Op::LogSoftmax(x) => row_softmax(v(x), true),
        Op::Log(x) => {
            let (r, c) = v(x).dims();
            Tensor::matrix(r, c, v(x).data().iter().map(|&e| e.ln()).collect())?
        }
        Op::Sum(x) => Tensor::scalar(v(x).data().iter().copied().sum()),
        Op::SumRows(x) => {
            let (r, c) = v(x).dims();
            let mut out = vec![T::zero(); c];
            for i in 0..r {
                for (o, &e) in out.iter_mut().zip(v(x).row_slice(i)) {
                    *o += e;
                }
            }
            Tensor::row(out)
        }
        Op::SumCols(x) => {
            let (r, _) = v(x).dims();
            Tensor::column((0..r).map(|i| v(x).row_slice(i).iter().copied().sum()).collect())
        }
        Op::Concat { parts, axis } => concat(index, name, parts.iter().map(v).collect(), *axis)?,
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => slice(index, name, v(x), *axis, *start, *len)?,
        Op::StopGradient(x) => v(x).clone(),
    };
    if !out.is_finite() {
        return Err(EngineError::NonFinite { node: index, op: name });
    }
    Ok(out)
}

fn concat<T: Scalar>(
    node: usize,
    name: &'static str,
    parts: Vec<&Tensor<T>>,
    axis: Axis,
) -> Result<Tensor<T>, EngineError> {
    if parts.is_empty() {
        return Err(shape_err(node, name, "no operands".into()));
    }
    match axis {
        Axis::Rows => {
            let cols = parts[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in &parts {
                if p.cols() != cols {
                    return Err(shape_err(node, name, format!("column counts differ: {} vs {}", cols, p.cols())));
                }
                rows += p.rows();
                data.extend_from_slice(p.data());
            }
            Tensor::matrix(rows, cols, data)
        }
        Axis::Cols => {
            let rows = parts[0].rows();
            if let Some(p) = parts.iter().find(|p| p.rows() != rows) {
                return Err(shape_err(node, name, format!("row counts differ: {} vs {}", rows, p.rows())));
            }
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row_slice(r));
                }
            }
            Tensor::matrix(rows, cols, data)
        }
    }
}

fn slice<T: Scalar>(
    node: usize,
    name: &'static str,
    x: &Tensor<T>,
    axis: Axis,
    start: usize,
    len: usize,
) -> Result<Tensor<T>, EngineError> {
    let (r, c) = x.dims();
    match axis {
        Axis::Rows => {
            if start + len > r {
                return Err(shape_err(node, name, format!("rows {start}..{} out of {r}", start + len)));
            }
            Tensor::matrix(len, c, x.data()[start * c..(start + len) * c].to_vec())
        }
        Axis::Cols => {
            if start + len > c {
                return Err(shape_err(node, name, format!("cols {start}..{} out of {c}", start + len)));
            }
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&x.row_slice(i)[start..start + len]);
            }
            Tensor::matrix(r, len, data)
        }
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Which nodes depend on at least one parameter through differentiable
/// edges.
fn grad_mask<T: Scalar>(nodes: &[Op<T>]) -> Vec<bool> {
    let mut mask = vec![false; nodes.len()];
    for (i, op) in nodes.iter().enumerate() {
        mask[i] = match op {
            Op::Param(_) => true,
            Op::Input(_) | Op::Constant(_) | Op::StopGradient(_) => false,
            other => other.operands().iter().any(|o| mask[o.0]),
        };
    }
    mask
}

pub(crate) fn backward<T: Scalar>(
    nodes: &[Op<T>],
    values: &[Tensor<T>],
    output: NodeId,
    params: &ParamStore<T>,
) -> Result<Gradients<T>, EngineError> {
    if output.0 >= nodes.len() {
        return Err(EngineError::UnknownNode(output.0));
    }
    let out_val = &values[output.0];
    let value = out_val
        .item()
        .ok_or_else(|| EngineError::NotScalar(out_val.shape().to_vec()))?;

    let mask = grad_mask(nodes);
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    grads[output.0] = Some(Tensor::filled(out_val.shape(), T::one()));
    let mut param_grads: BTreeMap<String, Tensor<T>> = params
        .iter()
        .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
        .collect();

    for i in (0..=output.0).rev() {
        if !mask[i] {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        let val = |id: &NodeId| &values[id.0];
        match &nodes[i] {
            Op::Param(name) => {
                if let Some(acc) = param_grads.get_mut(name) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            }
            Op::Input(_) | Op::Constant(_) | Op::StopGradient(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(nodes[i], Op::Sub(..));
                if mask[a.0] {
                    add_into(&mut grads[a.0], reduce_to(&g, val(a).dims()));
                }
                if mask[b.0] {
                    let mut gb = reduce_to(&g, val(b).dims());
                    if negate {
                        gb = gb.map(|x| -x);
                    }
                    add_into(&mut grads[b.0], gb);
                }
            }
            Op::Mul(a, b) => {
                if mask[a.0] {
                    let prod = zip_broadcast(i, "mul", &g, val(b), |x, y| x * y)?;
                    add_into(&mut grads[a.0], reduce_to(&prod, val(a).dims()));
                }
                if mask[b.0] {
                    let prod = zip_broadcast(i, "mul", &g, val(a), |x, y| x * y)?;
                    add_into(&mut grads[b.0], reduce_to(&prod, val(b).dims()));
                }
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(nodes[i], Op::Max(..));
                let (ad, bd) = (val(a).dims(), val(b).dims());
                let od = g.dims();
                let mut ga = vec![T::zero(); od.0 * od.1];
                let mut gb = vec![T::zero(); od.0 * od.1];
                for r in 0..od.0 {
                    for c in 0..od.1 {
                        let x = val(a).data()[bidx(ad, r, c)];
                        let y = val(b).data()[bidx(bd, r, c)];
                        let first = if is_max { x >= y } else { x <= y };
                        let k = r * od.1 + c;
                        if first {
                            ga[k] = g.data()[k];
                        } else {
                            gb[k] = g.data()[k];
                        }
                    }
                }
                if mask[a.0] {
                    let t = Tensor::matrix(od.0, od.1, ga)?;
                    add_into(&mut grads[a.0], reduce_to(&t, ad));
                }
                if mask[b.0] {
                    let t = Tensor::matrix(od.0, od.1, gb)?;
                    add_into(&mut grads[b.0], reduce_to(&t, bd));
                }
            }
            Op::MatMul(a, b) => {
                let (ad, bd) = (val(a).dims(), val(b).dims());
                if mask[a.0] {
                    let bt = transpose(val(b));
                    let data = matmul_raw(g.data(), (ad.0, bd.1), bt.data(), ad.1);
                    add_into(&mut grads[a.0], Tensor::matrix(ad.0, ad.1, data)?);
                }
                if mask[b.0] {
                    let at = transpose(val(a));
                    let data = matmul_raw(at.data(), (ad.1, ad.0), g.data(), bd.1);
                    add_into(&mut grads[b.0], Tensor::matrix(bd.0, bd.1, data)?);
                }
            }
            Op::Affine { x, scale, .. } => {
                add_into(&mut grads[x.0], g.map(|e| e * *scale));
            }
            Op::Activate(x, f) => {
                let xv = val(x).data();
                let yv = values[i].data();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| e * activate_grad(*f, xv[k], yv[k]))
                    .collect();
                add_into(&mut grads[x.0], Tensor::matrix(g.rows(), g.cols(), data)?);
            }
            Op::Softmax(x) => {
                let y = &values[i];
                let (r, c) = y.dims();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let yr = y.row_slice(row);
                    let gr = g.row_slice(row);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(&yy, &gg)| yy * (gg - dot)));
                }
                add_into(&mut grads[x.0], Tensor::matrix(r, c, data)?);
            }
            Op::LogSoftmax(x) => {
                let y = &values[i];
                let (r, c) = y.dims();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let yr = y.row_slice(row);
                    let gr = g.row_slice(row);
                    let total: T = gr.iter().copied().sum();
                    data.extend(yr.iter().zip(gr).map(|(&ly, &gg)| gg - ly.exp() * total));
                }
                add_into(&mut grads[x.0], Tensor::matrix(r, c, data)?);
            }
            Op::Log(x) => {
                let gx = zip_broadcast(i, "log", &g, val(x), |gg, xx| gg / xx)?;
                add_into(&mut grads[x.0], gx);
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                let (r, c) = val(x).dims();
                add_into(&mut grads[x.0], Tensor::filled(&[r, c], s));
            }
            Op::SumRows(x) => {
                let (r, c) = val(x).dims();
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend_from_slice(g.data());
                }
                add_into(&mut grads[x.0], Tensor::matrix(r, c, data)?);
            }
            Op::SumCols(x) => {
                let (r, c) = val(x).dims();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    data.extend(std::iter::repeat_n(g.data()[row], c));
                }
                add_into(&mut grads[x.0], Tensor::matrix(r, c, data)?);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = val(p).dims();
                    let (start, len) = match axis {
                        Axis::Rows => (offset, pr),
                        Axis::Cols => (offset, pc),
                    };
                    offset += len;
                    if mask[p.0] {
                        add_into(&mut grads[p.0], slice(i, "concat", &g, *axis, start, len)?);
                    }
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let (r, c) = val(x).dims();
                let mut full = vec![T::zero(); r * c];
                for gr in 0..g.rows() {
                    for gc in 0..g.cols() {
                        let (rr, cc) = match axis {
                            Axis::Rows => (gr + start, gc),
                            Axis::Cols => (gr, gc + start),
                        };
                        full[rr * c + cc] += g.data()[gr * g.cols() + gc];
                    }
                }
                let _ = len;
                add_into(&mut grads[x.0], Tensor::matrix(r, c, full)?);
            }
        }
    }

    Ok(Gradients {
        value,
        params: param_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (k, v) in entries {
            s.insert(k, v.clone());
        }
        s
    }

    #[test]
    fn identity_graph() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        g.set_output("y", x);
        let mut b = Bindings::new();
        b.insert("x".into(), Tensor::scalar(3.0));
        let out = g.evaluate(&ParamStore::new(), &b).unwrap();
        assert_eq!(out.output("y").unwrap().item(), Some(3.0));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.softmax(x);
        let out = g.evaluate(&ParamStore::new(), &Bindings::new()).unwrap();
        assert_eq!(out.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_softmax_matches_hand_evaluation() {
        // log softmax([1,2,3])[2] = 3 - ln(e + e^2 + e^3)
        let e = std::f64::consts::E;
        let expected = 3.0 - (e + e * e + e * e * e).ln();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let s = g.softmax(x);
        let l = g.log(s);
        let picked = g.slice(l, Axis::Cols, 2, 1);
        let out = g.evaluate(&ParamStore::new(), &Bindings::new()).unwrap();
        let got = out.value(picked).item().unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn linear_gradient() {
        let mut g = Graph::<f64>::new();
        let th = g.param("theta");
        let y = g.scale(th, 2.0);
        let grads = g
            .gradient(&store(&[("theta", Tensor::scalar(5.0))]), &Bindings::new(), y)
            .unwrap();
        assert_eq!(grads.value, 10.0);
        assert_eq!(grads.get("theta").unwrap().item(), Some(2.0));
    }

    #[test]
    fn stop_gradient_detaches_coefficient() {
        let mut g = Graph::<f64>::new();
        let th = g.param("theta");
        let detached = g.stop_gradient(th);
        let y = g.mul(detached, th);
        let grads = g
            .gradient(&store(&[("theta", Tensor::scalar(3.0))]), &Bindings::new(), y)
            .unwrap();
        assert_eq!(grads.value, 9.0);
        assert_eq!(grads.get("theta").unwrap().item(), Some(3.0));
    }

    #[test]
    fn softmax_cross_entropy_gradient_identity() {
        let logits = vec![0.3, -1.2, 2.0, 0.5];
        let k = 2;
        let mut g = Graph::<f64>::new();
        let z = g.param("z");
        let mut onehot = vec![0.0; 4];
        onehot[k] = 1.0;
        let t = g.constant(Tensor::row(onehot.clone()));
        let loss = g.softmax_cross_entropy(z, t);
        let grads = g
            .gradient(&store(&[("z", Tensor::row(logits.clone()))]), &Bindings::new(), loss)
            .unwrap();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let zsum: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        for (i, gi) in grads.get("z").unwrap().data().iter().enumerate() {
            let p = (logits[i] - m).exp() / zsum;
            assert!((gi - (p - onehot[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::<f64>::new();
        let th = g.param("theta");
        let err = g
            .gradient(&store(&[("theta", Tensor::row(vec![1.0, 2.0]))]), &Bindings::new(), th)
            .unwrap_err();
        assert!(matches!(err, EngineError::NotScalar(_)));
    }

    #[test]
    fn detached_output_gives_zero_gradients() {
        let mut g = Graph::<f64>::new();
        let _th = g.param("theta");
        let c = g.scalar(7.0);
        let grads = g
            .gradient(&store(&[("theta", Tensor::row(vec![1.0, 2.0]))]), &Bindings::new(), c)
            .unwrap();
        assert_eq!(grads.value, 7.0);
        assert_eq!(grads.get("theta").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::row(vec![1.0, 2.0]));
        let b = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let _ = g.matmul(a, b);
        match g.evaluate(&ParamStore::new(), &Bindings::new()).unwrap_err() {
            EngineError::Shape { node, op, .. } => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::scalar(0.0));
        let _ = g.log(a);
        assert!(matches!(
            g.evaluate(&ParamStore::new(), &Bindings::new()).unwrap_err(),
            EngineError::NonFinite { node: 1, op: "log" }
        ));
    }

    #[test]
    fn min_max_ties_route_to_first_operand() {
        let mut g = Graph::<f64>::new();
        let a = g.param("a");
        let b = g.param("b");
        let m = g.min(a, b);
        let x = g.max(a, b);
        let s = g.add(m, x);
        let grads = g
            .gradient(
                &store(&[("a", Tensor::scalar(1.0)), ("b", Tensor::scalar(1.0))]),
                &Bindings::new(),
                s,
            )
            .unwrap();
        assert_eq!(grads.get("a").unwrap().item(), Some(2.0));
        assert_eq!(grads.get("b").unwrap().item(), Some(0.0));
    }

    #[test]
    fn unbound_input_is_an_error() {
        let mut g = Graph::<f64>::new();
        let _ = g.input("x");
        assert_eq!(
            g.evaluate(&ParamStore::new(), &Bindings::new()).unwrap_err(),
            EngineError::UnboundInput("x".into())
        );
    }
}

//! Reverse-mode tape. Every operation appends a record holding its output
//! and input handles; [`Tape::backward`] walks the records in reverse and
//! applies each kernel's vector-Jacobian product.

use indexmap::IndexMap;

use super::ops;
use super::{ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation names as they appear in records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulExact,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    Sigmoid,
    Tanh,
    SoftmaxRows,
    Reshape,
    BroadcastTo,
    Concat,
    Slice,
    SumAxis,
    IndexAxis0,
    Stack0,
    GatherRows,
    Conv3x3,
    Bce,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulExact(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    BroadcastTo(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, len: usize },
    SumAxis { src: Var, axis: usize },
    IndexAxis0 { src: Var, index: usize },
    Stack0(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    Conv3x3 { x: Var, kernel: Var },
    Bce { logits: Var, target: Tensor },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulExact(..) => OpKind::MatMulExact,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::Reshape(_) => OpKind::Reshape,
            Op::BroadcastTo(_) => OpKind::BroadcastTo,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::IndexAxis0 { .. } => OpKind::IndexAxis0,
            Op::Stack0(_) => OpKind::Stack0,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Conv3x3 { .. } => OpKind::Conv3x3,
            Op::Bce { .. } => OpKind::Bce,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulExact(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SoftmaxRows(a)
            | Op::Reshape(a)
            | Op::BroadcastTo(a) => vec![*a],
            Op::Concat(v) | Op::Stack0(v) => v.clone(),
            Op::Slice { src, .. } | Op::SumAxis { src, .. } | Op::IndexAxis0 { src, .. } => vec![*src],
            Op::GatherRows { table, .. } => vec![*table],
            Op::Conv3x3 { x, kernel } => vec![*x, *kernel],
            Op::Bce { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation, optionally bound to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    bound: IndexMap<String, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            bound: IndexMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Parameters bound so far, in first-use order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter from the attached store, once per tape.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let value = store.get(name)?.clone();
        let v = self.leaf(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.is_some_and(|p| p.contains(name))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// Matrix product with correctly rounded dot products.
    pub fn matmul_exact(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul_exact(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMulExact(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = ops::transpose(self.value(a))?;
        Ok(self.push(y, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let y = ops::scale(self.value(a), factor);
        self.push(y, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = ops::sigmoid(self.value(a));
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = ops::tanh(self.value(a));
        self.push(y, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let y = ops::softmax_rows(self.value(a))?;
        Ok(self.push(y, Op::SoftmaxRows(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a)))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = ops::broadcast_to(self.value(a), shape)?;
        Ok(self.push(y, Op::BroadcastTo(a)))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_channels(self.value(src), start, len)?;
        Ok(self.push(y, Op::Slice { src, start, len }))
    }

    pub fn sum_axis(&mut self, src: Var, axis: usize) -> Result<Var> {
        let y = ops::sum_axis(self.value(src), axis)?;
        Ok(self.push(y, Op::SumAxis { src, axis }))
    }

    pub fn index_axis0(&mut self, src: Var, index: usize) -> Result<Var> {
        let y = ops::index_axis0(self.value(src), index)?;
        Ok(self.push(y, Op::IndexAxis0 { src, index }))
    }

    pub fn stack_axis0(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::stack_axis0(&values)?;
        Ok(self.push(y, Op::Stack0(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let y = ops::gather_rows(self.value(table), ids)?;
        Ok(self.push(
            y,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn conv3x3(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let y = ops::conv3x3(self.value(x), self.value(kernel))?;
        Ok(self.push(y, Op::Conv3x3 { x, kernel }))
    }

    /// Scalar mean binary cross-entropy against a fixed binary target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let loss = ops::bce_with_logits(self.value(logits), target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                target: target.clone(),
            },
        ))
    }

    /// `x·w + b` on a 2-D input with bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Per-position affine map over an `H×W×C` map, as reshape → matmul → bias → reshape.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Rank {
                op: "conv1x1",
                expected: 3,
                shape,
            });
        }
        let flat = self.reshape(x, &[shape[0] * shape[1], shape[2]])?;
        let y = self.affine(flat, w, b)?;
        let cout = self.shape(y)[1];
        self.reshape(y, &[shape[0], shape[1], cout])
    }

    /// Recomputes the forward value of `v` from its recorded inputs.
    pub fn replay(&self, v: Var) -> Result<Tensor> {
        let node = &self.nodes[v.0];
        let val = |x: &Var| self.value(*x);
        Ok(match &node.op {
            Op::Leaf => node.value.clone(),
            Op::MatMul(a, b) => ops::matmul(val(a), val(b))?,
            Op::MatMulExact(a, b) => ops::matmul_exact(val(a), val(b))?,
            Op::Transpose(a) => ops::transpose(val(a))?,
            Op::Add(a, b) => ops::add(val(a), val(b))?,
            Op::Sub(a, b) => ops::sub(val(a), val(b))?,
            Op::Mul(a, b) => ops::hadamard(val(a), val(b))?,
            Op::Scale(a, f) => ops::scale(val(a), *f),
            Op::Sigmoid(a) => ops::sigmoid(val(a)),
            Op::Tanh(a) => ops::tanh(val(a)),
            Op::SoftmaxRows(a) => ops::softmax_rows(val(a))?,
            Op::Reshape(a) => val(a).reshape(node.value.shape())?,
            Op::BroadcastTo(a) => ops::broadcast_to(val(a), node.value.shape())?,
            Op::Concat(parts) => {
                let values: Vec<&Tensor> = parts.iter().map(val).collect();
                ops::concat_channels(&values)?
            }
            Op::Slice { src, start, len } => ops::slice_channels(val(src), *start, *len)?,
            Op::SumAxis { src, axis } => ops::sum_axis(val(src), *axis)?,
            Op::IndexAxis0 { src, index } => ops::index_axis0(val(src), *index)?,
            Op::Stack0(parts) => {
                let values: Vec<&Tensor> = parts.iter().map(val).collect();
                ops::stack_axis0(&values)?
            }
            Op::GatherRows { table, ids } => ops::gather_rows(val(table), ids)?,
            Op::Conv3x3 { x, kernel } => ops::conv3x3(val(x), val(kernel))?,
            Op::Bce { logits, target } => Tensor::scalar(ops::bce_with_logits(val(logits), target)?),
        })
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("output must hold one element, has shape {:?}", self.shape(output)),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(self.shape(output)));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.vjp(node, &g)?;
            for (input, delta) in contributions {
                let slot = &mut grads[input.0];
                *slot = Some(match slot.take() {
                    Some(acc) => ops::add(&acc, &delta)?,
                    None => delta,
                });
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.bound.clone(),
        })
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |x: &Var| self.value(*x);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulExact(a, b) => {
                let (da, db) = ops::matmul_backward(val(a), val(b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, ops::transpose(g)?)],
            Op::Add(a, b) => vec![
                (*a, ops::sum_to_shape(g, val(a).shape())?),
                (*b, ops::sum_to_shape(g, val(b).shape())?),
            ],
            Op::Sub(a, b) => vec![
                (*a, ops::sum_to_shape(g, val(a).shape())?),
                (*b, ops::scale(&ops::sum_to_shape(g, val(b).shape())?, -1.0)),
            ],
            Op::Mul(a, b) => {
                let (da, db) = ops::hadamard_backward(val(a), val(b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, f) => vec![(*a, ops::scale(g, *f))],
            Op::Sigmoid(a) => vec![(*a, ops::sigmoid_backward(&node.value, g))],
            Op::Tanh(a) => vec![(*a, ops::tanh_backward(&node.value, g))],
            Op::SoftmaxRows(a) => vec![(*a, ops::softmax_rows_backward(&node.value, g)?)],
            Op::Reshape(a) => vec![(*a, g.reshape(val(a).shape())?)],
            Op::BroadcastTo(a) => vec![(*a, ops::sum_to_shape(g, val(a).shape())?)],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = *val(p).shape().last().unwrap();
                    out.push((*p, ops::slice_channels(g, start, w)?));
                    start += w;
                }
                out
            }
            Op::Slice { src, start, .. } => {
                let channels = *val(src).shape().last().unwrap();
                vec![(*src, ops::unslice_channels(g, *start, channels)?)]
            }
            Op::SumAxis { src, axis } => {
                let extent = val(src).shape()[*axis];
                vec![(*src, ops::expand_axis(g, *axis, extent)?)]
            }
            Op::IndexAxis0 { src, index } => {
                let shape = val(src).shape();
                let inner = g.len();
                let mut data = vec![0.0; val(src).len()];
                data[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                vec![(*src, Tensor::new(shape.to_vec(), data)?)]
            }
            Op::Stack0(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                for (i, p) in parts.iter().enumerate() {
                    out.push((*p, ops::index_axis0(g, i)?));
                }
                out
            }
            Op::GatherRows { table, ids } => {
                let rows = val(table).shape()[0];
                vec![(*table, ops::scatter_rows(g, ids, rows)?)]
            }
            Op::Conv3x3 { x, kernel } => {
                let (dx, dk) = ops::conv3x3_backward(val(x), val(kernel), g)?;
                vec![(*x, dx), (*kernel, dk)]
            }
            Op::Bce { logits, target } => {
                vec![(*logits, ops::bce_with_logits_backward(val(logits), target, g.data()[0])?)]
            }
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: IndexMap<String, Var>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a bound parameter; zeros when it did not reach the output.
    pub fn param(&self, name: &str, shape: &[usize]) -> Tensor {
        self.params
            .get(name)
            .and_then(|&v| self.get(v).cloned())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Gradients for every parameter of `store`, in store order.
    pub fn for_store(&self, store: &ParamStore) -> IndexMap<String, Tensor> {
        store
            .iter()
            .map(|(name, t)| (name.to_string(), self.param(name, t.shape())))
            .collect()
    }
}

//! Tape-style computation graph with eager forward evaluation and
//! reverse-mode gradients.
//!
//! Nodes are appended in topological order: every builder call evaluates the
//! new node immediately, so data-dependent control flow (greedy decoding)
//! works naturally. The whole graph can also be re-evaluated against new
//! input bindings or perturbed parameters, which is what `eval` and
//! [`grad_check`] rely on.

use std::borrow::Cow;

use crate::error::AutodiffError;
use crate::tensor::{GradStore, ParamId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    Concat(Vec<NodeId>),
    Slice { src: NodeId, start: usize, len: usize },
    Gather { src: NodeId, indices: Vec<usize> },
    Lookup { table: NodeId, row: usize },
    Sum(NodeId),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Log(_) => "log",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Lookup { .. } => "lookup",
            Op::Sum(_) => "sum",
            Op::Reshape(..) => "reshape",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Reshape(a, _) => vec![*a],
            Op::Concat(xs) => xs.clone(),
            Op::Slice { src, .. } | Op::Gather { src, .. } => vec![*src],
            Op::Lookup { table, .. } => vec![*table],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the graph's `ParamSet`.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A computation graph over a borrowed (or, after perturbation, owned) parameter set.
pub struct Graph<'p> {
    params: Cow<'p, ParamSet>,
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    param_nodes: Vec<Option<NodeId>>,
}

type Result<T> = std::result::Result<T, AutodiffError>;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            param_nodes: vec![None; params.len()],
            params: Cow::Borrowed(params),
            nodes: Vec::new(),
            inputs: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(pid), _) => self.params.get(*pid),
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    // ---- leaves ---------------------------------------------------------

    /// Placeholder whose value can be rebound through [`Graph::eval`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        let id = self.push_leaf(Op::Input, Some(value), false);
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Constant, Some(value), false)
    }

    /// Leaf for a trainable parameter. Repeated calls return the same node.
    pub fn param(&mut self, pid: ParamId) -> NodeId {
        if let Some(id) = self.param_nodes[pid.0] {
            return id;
        }
        let id = self.push_leaf(Op::Param(pid), None, true);
        self.param_nodes[pid.0] = Some(id);
        id
    }

    fn push_leaf(&mut self, op: Op, value: Option<Tensor>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    // ---- operations -----------------------------------------------------

    /// Matrix product. Supports `[m,k]x[k,n]`, `[m,k]x[k]` and `[k]x[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(a))
    }

    /// Natural logarithm, elementwise.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }

    /// Concatenation of rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Contiguous slice along the first axis.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::Slice { src, start, len })
    }

    /// Picks elements of a rank-1 tensor by index (indices may repeat).
    pub fn gather(&mut self, src: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Gather { src, indices })
    }

    /// Row `row` of a rank-2 embedding table.
    pub fn lookup(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        self.push(Op::Lookup { table, row })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Reshape(a, shape))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let width = rows.first().map(|r| self.value(*r).len()).unwrap_or(0);
        let flat = self.concat(rows)?;
        self.reshape(flat, vec![rows.len(), width])
    }

    /// `w·x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let index = self.nodes.len();
        let value = self.compute(&op, index)?;
        let needs_grad = op.operands().iter().any(|o| self.nodes[o.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(NodeId(index))
    }

    // ---- evaluation -----------------------------------------------------

    /// Rebinds every input placeholder (in creation order), re-evaluates the
    /// whole graph and returns the value of `output`.
    pub fn eval(&mut self, bindings: &[Tensor], output: NodeId) -> Result<&Tensor> {
        if bindings.len() != self.inputs.len() {
            return Err(AutodiffError::BindingCount {
                expected: self.inputs.len(),
                got: bindings.len(),
            });
        }
        for (slot, value) in self.inputs.clone().into_iter().zip(bindings) {
            let current = self.value(slot);
            if current.shape() != value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    node: slot.0,
                    op: "input",
                    detail: format!("bound {:?}, declared {:?}", value.shape(), current.shape()),
                });
            }
            self.nodes[slot.0].value = Some(value.clone());
        }
        self.recompute()?;
        Ok(self.value(output))
    }

    /// Re-evaluates every non-leaf node in order.
    pub fn recompute(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Input | Op::Constant | Op::Param(_)) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let v = self.compute(&op, i)?;
            self.nodes[i].value = Some(v);
        }
        Ok(())
    }

    fn mismatch(&self, node: usize, op: &Op, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            node,
            op: op.name(),
            detail,
        }
    }

    fn compute(&self, op: &Op, index: usize) -> Result<Tensor> {
        let out = match op {
            Op::Input | Op::Constant | Op::Param(_) => unreachable!("leaves are not computed"),
            Op::MatMul(a, b) => {
                let (a, b) = (self.value(*a), self.value(*b));
                matmul_forward(a, b).ok_or_else(|| {
                    self.mismatch(index, op, format!("{:?} x {:?}", a.shape(), b.shape()))
                })?
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if x.shape() != y.shape() {
                    return Err(self.mismatch(
                        index,
                        op,
                        format!("{:?} vs {:?}", x.shape(), y.shape()),
                    ));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::Scale(a, k) => map(self.value(*a), |v| v * k),
            Op::Tanh(a) => map(self.value(*a), f64::tanh),
            Op::Sigmoid(a) => map(self.value(*a), sigmoid),
            Op::Log(a) => map(self.value(*a), f64::ln),
            Op::Softmax(a) => {
                let x = self.value(*a);
                let width = *x.shape().last().ok_or_else(|| {
                    self.mismatch(index, op, "softmax of a scalar".to_string())
                })?;
                if width == 0 {
                    return Err(self.mismatch(index, op, "empty last axis".to_string()));
                }
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(width) {
                    softmax_in_place(row);
                }
                Tensor::new(x.shape().to_vec(), out)?
            }
            Op::Concat(parts) => {
                let mut data = Vec::new();
                for p in parts {
                    let v = self.value(*p);
                    if v.rank() != 1 {
                        return Err(self.mismatch(
                            index,
                            op,
                            format!("operand {} has shape {:?}", p.0, v.shape()),
                        ));
                    }
                    data.extend_from_slice(v.data());
                }
                Tensor::vector(data)
            }
            Op::Slice { src, start, len } => {
                let x = self.value(*src);
                let (rows, width) = match x.rank() {
                    1 => (x.shape()[0], 1),
                    2 => (x.shape()[0], x.shape()[1]),
                    _ => return Err(self.mismatch(index, op, format!("rank {}", x.rank()))),
                };
                if start + len > rows {
                    return Err(self.mismatch(
                        index,
                        op,
                        format!("[{}, {}) out of {}", start, start + len, rows),
                    ));
                }
                let data = x.data()[start * width..(start + len) * width].to_vec();
                let mut shape = x.shape().to_vec();
                shape[0] = *len;
                Tensor::new(shape, data)?
            }
            Op::Gather { src, indices } => {
                let x = self.value(*src);
                if x.rank() != 1 || indices.iter().any(|&i| i >= x.len()) {
                    return Err(self.mismatch(
                        index,
                        op,
                        format!("indices {:?} into {:?}", indices, x.shape()),
                    ));
                }
                Tensor::vector(indices.iter().map(|&i| x.data()[i]).collect())
            }
            Op::Lookup { table, row } => {
                let t = self.value(*table);
                if t.rank() != 2 || *row >= t.shape()[0] {
                    return Err(self.mismatch(
                        index,
                        op,
                        format!("row {} of {:?}", row, t.shape()),
                    ));
                }
                let w = t.shape()[1];
                Tensor::vector(t.data()[row * w..(row + 1) * w].to_vec())
            }
            Op::Sum(a) => Tensor::scalar(self.value(*a).data().iter().sum()),
            Op::Reshape(a, shape) => {
                let x = self.value(*a);
                if shape.iter().product::<usize>() != x.len() {
                    return Err(self.mismatch(
                        index,
                        op,
                        format!("{:?} -> {:?}", x.shape(), shape),
                    ));
                }
                Tensor::new(shape.clone(), x.data().to_vec())?
            }
        };
        if !out.all_finite() {
            return Err(AutodiffError::NonFinite {
                node: index,
                op: op.name(),
            });
        }
        Ok(out)
    }

    // ---- gradients ------------------------------------------------------

    /// Reverse-mode gradient of the scalar `loss` with respect to every parameter.
    ///
    /// Parameters that do not influence `loss` get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NotScalar {
                node: loss.0,
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads = GradStore::zeros_like(&self.params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input | Op::Constant => {}
                Op::Param(pid) => {
                    for (g, d) in grads.get_mut(*pid).data_mut().iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        matmul_backward_a(av, bv, &dy, slot(&mut adj, *a, av.len()));
                    }
                    if self.nodes[b.0].needs_grad {
                        matmul_backward_b(av, bv, &dy, slot(&mut adj, *b, bv.len()));
                    }
                }
                Op::Add(a, b) => {
                    self.propagate(&mut adj, *a, &dy);
                    self.propagate(&mut adj, *b, &dy);
                }
                Op::Sub(a, b) => {
                    self.propagate(&mut adj, *a, &dy);
                    if self.nodes[b.0].needs_grad {
                        let neg: Vec<f64> = dy.iter().map(|d| -d).collect();
                        add_into(&mut adj, *b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.nodes[a.0].needs_grad {
                        let da: Vec<f64> = dy.iter().zip(bv).map(|(d, y)| d * y).collect();
                        add_into(&mut adj, *a, &da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db: Vec<f64> = dy.iter().zip(av).map(|(d, x)| d * x).collect();
                        add_into(&mut adj, *b, &db);
                    }
                }
                Op::Scale(a, k) => {
                    let da: Vec<f64> = dy.iter().map(|d| d * k).collect();
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Tanh(a) => {
                    let y = self.value(NodeId(i)).data();
                    let da: Vec<f64> = dy.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect();
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(NodeId(i)).data();
                    let da: Vec<f64> = dy.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect();
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let da: Vec<f64> = dy.iter().zip(x).map(|(d, x)| d / x).collect();
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Softmax(a) => {
                    let y = self.value(NodeId(i));
                    let width = *y.shape().last().expect("softmax output has an axis");
                    let mut da = vec![0.0; y.len()];
                    for ((out, yr), dr) in da
                        .chunks_mut(width)
                        .zip(y.data().chunks(width))
                        .zip(dy.chunks(width))
                    {
                        let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in out.iter_mut().zip(yr).zip(dr) {
                            *o = p * (q - dot);
                        }
                    }
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.propagate(&mut adj, *p, &dy[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { src, start, .. } => {
                    if self.nodes[src.0].needs_grad {
                        let x = self.value(*src);
                        let width = if x.rank() == 2 { x.shape()[1] } else { 1 };
                        let buf = slot(&mut adj, *src, x.len());
                        for (k, d) in dy.iter().enumerate() {
                            buf[start * width + k] += d;
                        }
                    }
                }
                Op::Gather { src, indices } => {
                    if self.nodes[src.0].needs_grad {
                        let n = self.value(*src).len();
                        let buf = slot(&mut adj, *src, n);
                        for (&idx, d) in indices.iter().zip(&dy) {
                            buf[idx] += d;
                        }
                    }
                }
                Op::Lookup { table, row } => {
                    if self.nodes[table.0].needs_grad {
                        let t = self.value(*table);
                        let w = t.shape()[1];
                        let buf = slot(&mut adj, *table, t.len());
                        for (k, d) in dy.iter().enumerate() {
                            buf[row * w + k] += d;
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let da = vec![dy[0]; n];
                    self.propagate(&mut adj, *a, &da);
                }
                Op::Reshape(a, _) => self.propagate(&mut adj, *a, &dy),
            }
        }
        Ok(grads)
    }

    fn propagate(&self, adj: &mut [Option<Vec<f64>>], target: NodeId, delta: &[f64]) {
        if self.nodes[target.0].needs_grad {
            add_into(adj, target, delta);
        }
    }

    /// Mutable access to the graph's parameters. Clones them on first use,
    /// so the caller's `ParamSet` is never modified.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.params.to_mut()
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(adj: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
    match &mut adj[id.0] {
        Some(buf) => {
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
        empty @ None => *empty = Some(delta.to_vec()),
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect())
        .expect("same shape as input")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Option<Tensor> {
    let (ad, bd) = (a.data(), b.data());
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::matrix(m, n, out).ok()
        }
        (&[m, k], &[k2]) if k == k2 => Some(Tensor::vector(
            (0..m)
                .map(|i| dot(&ad[i * k..(i + 1) * k], bd))
                .collect(),
        )),
        (&[k], &[k2, n]) if k == k2 => {
            let mut out = vec![0.0; n];
            for (p, av) in ad.iter().enumerate() {
                for (o, bv) in out.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
            Some(Tensor::vector(out))
        }
        _ => None,
    }
}

/// Accumulates `dA` for `C = A·B` into `da`.
fn matmul_backward_a(a: &Tensor, b: &Tensor, dc: &[f64], da: &mut [f64]) {
    let bd = b.data();
    match (a.shape(), b.shape()) {
        (&[m, k], &[_, n]) => {
            for i in 0..m {
                let drow = &dc[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bd[p * n..(p + 1) * n];
                    da[i * k + p] += dot(drow, brow);
                }
            }
        }
        (&[m, k], &[_]) => {
            for i in 0..m {
                let d = dc[i];
                for (o, x) in da[i * k..(i + 1) * k].iter_mut().zip(bd) {
                    *o += d * x;
                }
            }
        }
        (&[k], &[_, n]) => {
            for p in 0..k {
                da[p] += dot(&bd[p * n..(p + 1) * n], dc);
            }
        }
        _ => unreachable!("shapes validated in forward"),
    }
}

/// Accumulates `dB` for `C = A·B` into `db`.
fn matmul_backward_b(a: &Tensor, b: &Tensor, dc: &[f64], db: &mut [f64]) {
    let ad = a.data();
    match (a.shape(), b.shape()) {
        (&[m, k], &[_, n]) => {
            for i in 0..m {
                let drow = &dc[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    for (o, d) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                        *o += av * d;
                    }
                }
            }
        }
        (&[m, k], &[_]) => {
            for i in 0..m {
                let d = dc[i];
                for (o, x) in db.iter_mut().zip(&ad[i * k..(i + 1) * k]) {
                    *o += x * d;
                }
            }
        }
        (&[k], &[_, n]) => {
            for p in 0..k {
                let av = ad[p];
                for (o, d) in db[p * n..(p + 1) * n].iter_mut().zip(dc) {
                    *o += av * d;
                }
            }
        }
        _ => unreachable!("shapes validated in forward"),
    }
}

/// Central-difference gradient check of `loss` against [`Graph::backward`].
///
/// Returns the maximum over all parameter coordinates of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`. The graph's
/// parameters are restored afterwards.
pub fn grad_check(graph: &mut Graph<'_>, loss: NodeId, h: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AutodiffError::BadStep(h));
    }
    let analytic = graph.backward(loss)?;
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = graph.params().ids().collect();
    for pid in ids {
        for k in 0..graph.params().get(pid).len() {
            let orig = graph.params().get(pid).data()[k];
            let eval_at = |g: &mut Graph<'_>, v: f64| -> Result<f64> {
                g.params_mut().get_mut(pid).data_mut()[k] = v;
                g.recompute()?;
                Ok(g.scalar(loss))
            };
            let plus = eval_at(graph, orig + h);
            let minus = eval_at(graph, orig - h);
            graph.params_mut().get_mut(pid).data_mut()[k] = orig;
            let numeric = match (plus, minus) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * h),
                _ => f64::NAN,
            };
            if !numeric.is_finite() {
                graph.recompute()?;
                return Err(AutodiffError::NonFiniteNumeric {
                    param: graph.params().name(pid).to_string(),
                    index: k,
                });
            }
            let a = analytic.get(pid).data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    graph.recompute()?;
    Ok(worst)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Stored<'w, T> {
    Owned(Tensor<T>),
    Borrowed(&'w Tensor<T>),
}

impl<T> Stored<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Stored::Owned(t) => t,
            Stored::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    /// Constant, variable, or any node created while recording is off.
    Leaf,
    MatMul(NodeId, NodeId),
    Bmm(NodeId, NodeId),
    Transpose(NodeId),
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale { x: NodeId, s: NodeId },
    MulConst { x: NodeId, c: T },
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, stats: Vec<(T, T)> },
    Gelu { x: NodeId, exact: bool },
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Mean { x: NodeId, axis: usize },
    L2Norm(NodeId),
    Cosine(NodeId, NodeId),
    Std(NodeId),
    Abs(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    Slice { x: NodeId, start: usize },
    SelectRows { x: NodeId, rows: Vec<usize> },
    Stack(Vec<NodeId>),
    Sum(NodeId),
    Reshape(NodeId),
}

struct Node<'w, T> {
    value: Stored<'w, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A mask scalar that can be registered as a differentiation target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParam<T> {
    pub value: T,
    pub grad: T,
    /// Zero-based (layer, head).
    pub label: (usize, usize),
}

impl<T: Scalar> ScalarParam<T> {
    pub fn new(value: T, label: (usize, usize)) -> Self {
        Self {
            value,
            grad: T::zero(),
            label,
        }
    }
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in creation order, which is a valid topological order.
/// Weights enter as borrowed constants and never receive gradients; only
/// variables (and nodes depending on them) take part in `backward`.
pub struct Graph<'w, T> {
    nodes: Vec<Node<'w, T>>,
    recording: bool,
    backward_done: bool,
    scope: Option<String>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a one-element node; zero when the loss does not depend on it.
    pub fn scalar(&self, id: NodeId) -> T {
        self.get(id).map(|g| g.data()[0]).unwrap_or_else(T::zero)
    }
}

impl<'w, T: Scalar> Graph<'w, T> {
    pub fn new(recording: bool) -> Self {
        Self {
            nodes: Vec::new(),
            recording,
            backward_done: false,
            scope: None,
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Location attached to non-finite errors raised from now on.
    pub fn set_scope(&mut self, scope: Option<String>) {
        self.scope = scope;
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0].value.get()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn leaf(&mut self, value: Stored<'w, T>, requires_grad: bool) -> Result<NodeId> {
        if !value.get().all_finite() {
            return Err(Error::NonFinite {
                op: "input",
                location: self.scope.clone(),
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.leaf(Stored::Owned(value), false)
    }

    /// Constant borrowed for the lifetime of the graph (model weights).
    pub fn weight(&mut self, value: &'w Tensor<T>) -> Result<NodeId> {
        self.leaf(Stored::Borrowed(value), false)
    }

    /// Differentiable leaf. Without recording it behaves like a constant.
    pub fn variable(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.leaf(Stored::Owned(value), true)
    }

    /// Registers a mask scalar as a `[1]`-shaped differentiable leaf.
    pub fn param(&mut self, p: &ScalarParam<T>) -> Result<NodeId> {
        self.variable(Tensor::scalar(p.value))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op_name,
                location: self.scope.clone(),
            });
        }
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Stored::Owned(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::bmm(self.value(a), self.value(b))?;
        self.push("bmm", v, Op::Bmm(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::transpose(self.value(x))?;
        self.push("transpose", v, Op::Transpose(x), &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.value(a).shape() != self.value(b).shape();
        let v = tensor::add(self.value(a), self.value(b))?;
        self.push("add", v, Op::Add { a, b, broadcast }, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("div", self.value(a), self.value(b), |x, y| x / y)?;
        self.push("div", v, Op::Div(a, b), &[a, b])
    }

    /// `s * x` for a one-element node `s` (mask application).
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(Error::Shape {
                op: "scale",
                left: self.value(x).shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let v = tensor::scale(self.value(x), sv.item());
        self.push("scale", v, Op::Scale { x, s }, &[x, s])
    }

    pub fn mul_const(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let v = tensor::scale(self.value(x), c);
        self.push("mul_const", v, Op::MulConst { x, c }, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::softmax(self.value(x), false)?;
        self.push("softmax", v, Op::Softmax(x), &[x])
    }

    /// Softmax over `[.., q, k]` with keys after the query forced to zero.
    pub fn causal_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::softmax(self.value(x), true)?;
        self.push("causal_softmax", v, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let v = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let stats = if self.recording {
            tensor::layer_norm_stats(self.value(x), eps)
        } else {
            Vec::new()
        };
        self.push("layer_norm", v, Op::LayerNorm { x, gain, bias, stats }, &[x, gain, bias])
    }

    pub fn gelu(&mut self, x: NodeId, exact: bool) -> Result<NodeId> {
        let v = if exact {
            self.value(x).map(tensor::gelu_erf)
        } else {
            self.value(x).map(tensor::gelu_tanh)
        };
        self.push("gelu", v, Op::Gelu { x, exact }, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(T::tanh);
        self.push("tanh", v, Op::Tanh(x), &[x])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat_last(&values)?;
        self.push("concat", v, Op::Concat(parts.to_vec()), parts)
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = tensor::mean_axis(self.value(x), axis)?;
        self.push("mean", v, Op::Mean { x, axis }, &[x])
    }

    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(tensor::l2_norm(self.value(x).data()));
        self.push("l2_norm", v, Op::L2Norm(x), &[x])
    }

    /// Cosine similarity of two equally shaped tensors viewed as vectors.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "cosine",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (na, nb) = (tensor::l2_norm(av.data()), tensor::l2_norm(bv.data()));
        if na == T::zero() || nb == T::zero() {
            return Err(Error::ZeroNorm(None));
        }
        let v = Tensor::scalar(tensor::dot(av.data(), bv.data()) / (na * nb));
        self.push("cosine", v, Op::Cosine(a, b), &[a, b])
    }

    /// Population standard deviation over all elements.
    pub fn std(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::InvalidShape {
                op: "std",
                message: "empty input".into(),
            });
        }
        let (sd, _) = tensor::population_std(xv.data());
        self.push("std", Tensor::scalar(sd), Op::Std(x), &[x])
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(T::abs);
        self.push("abs", v, Op::Abs(x), &[x])
    }

    /// Rows of a `[rows, cols]` table selected by integer ids.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = tensor::gather_rows(self.value(table), ids)?;
        self.push("gather", v, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = tensor::slice_last(self.value(x), start, len)?;
        self.push("slice", v, Op::Slice { x, start }, &[x])
    }

    /// Rows of a rank-2 node (differentiable with respect to the node).
    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let v = tensor::gather_rows(self.value(x), rows)?;
        self.push("select_rows", v, Op::SelectRows { x, rows: rows.to_vec() }, &[x])
    }

    /// Stacks equally shaped nodes along a new leading axis. One-element
    /// inputs produce a vector `[k]`.
    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "stack",
            message: "no inputs".into(),
        })?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "stack",
                    left: shape.clone(),
                    right: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
        }
        let out_shape = if shape == [1] {
            vec![parts.len()]
        } else {
            std::iter::once(parts.len()).chain(shape.iter().copied()).collect()
        };
        let v = Tensor::new(out_shape, data)?;
        self.push("stack", v, Op::Stack(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a one-element `loss`. May be called once per graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::Graph("backward on a graph recorded without gradients".into()));
        }
        if self.backward_done {
            return Err(Error::Graph("backward already ran; run a fresh forward first".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gy);
                continue;
            }
            self.backprop_node(idx, &gy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// Runs `backward` and writes each mask gradient into its parameter.
    pub fn backward_params(
        &mut self,
        loss: NodeId,
        bindings: &[NodeId],
        params: &mut [ScalarParam<T>],
    ) -> Result<()> {
        if bindings.len() != params.len() {
            return Err(Error::Graph(format!(
                "{} parameter nodes for {} parameters",
                bindings.len(),
                params.len()
            )));
        }
        let grads = self.backward(loss)?;
        for (node, p) in bindings.iter().zip(params.iter_mut()) {
            p.grad = grads.scalar(*node);
            if !p.grad.is_finite() {
                return Err(Error::NonFinite {
                    op: "backward",
                    location: Some(format!("mask ({}, {})", p.label.0 + 1, p.label.1 + 1)),
                });
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
        if !self.wants(id) {
            return Ok(());
        }
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: "backward",
                location: None,
            });
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *v;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.get();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let bt = tensor::transpose(self.value(*b))?;
                    self.accumulate(grads, *a, tensor::matmul(gy, &bt)?)?;
                }
                if self.wants(*b) {
                    let at = tensor::transpose(self.value(*a))?;
                    self.accumulate(grads, *b, tensor::matmul(&at, gy)?)?;
                }
            }
            Op::Bmm(a, b) => {
                if self.wants(*a) {
                    let bt = tensor::transpose(self.value(*b))?;
                    self.accumulate(grads, *a, tensor::bmm(gy, &bt)?)?;
                }
                if self.wants(*b) {
                    let at = tensor::transpose(self.value(*a))?;
                    self.accumulate(grads, *b, tensor::bmm(&at, gy)?)?;
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, tensor::transpose(gy)?)?,
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, gy.clone())?;
                if self.wants(*b) {
                    let g = if *broadcast {
                        let bshape = self.value(*b).shape().to_vec();
                        let inner: usize = bshape.iter().product();
                        let mut acc = vec![T::zero(); inner];
                        for chunk in gy.data().chunks(inner) {
                            for (s, v) in acc.iter_mut().zip(chunk) {
                                *s += *v;
                            }
                        }
                        Tensor::new(bshape, acc)?
                    } else {
                        gy.clone()
                    };
                    self.accumulate(grads, *b, g)?;
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone())?;
                self.accumulate(grads, *b, gy.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, tensor::zip_map("mul", gy, self.value(*b), |g, v| g * v)?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, tensor::zip_map("mul", gy, self.value(*a), |g, v| g * v)?)?;
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.wants(*a) {
                    self.accumulate(grads, *a, tensor::zip_map("div", gy, bv, |g, v| g / v)?)?;
                }
                if self.wants(*b) {
                    // d(a/b)/db = -y / b
                    let t = tensor::zip_map("div", gy, y, |g, q| g * q)?;
                    self.accumulate(grads, *b, tensor::zip_map("div", &t, bv, |t, v| -t / v)?)?;
                }
            }
            Op::Scale { x, s } => {
                let sv = self.value(*s).item();
                if self.wants(*x) {
                    self.accumulate(grads, *x, tensor::scale(gy, sv))?;
                }
                if self.wants(*s) {
                    let g = tensor::dot(gy.data(), self.value(*x).data());
                    self.accumulate(grads, *s, Tensor::new(self.value(*s).shape().to_vec(), vec![g])?)?;
                }
            }
            Op::MulConst { x, c } => self.accumulate(grads, *x, tensor::scale(gy, *c))?,
            Op::Softmax(x) => {
                let n = y.last_dim();
                let mut g = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n).zip(gy.data().chunks(n)) {
                    let inner = tensor::dot(yr, gr);
                    g.extend(yr.iter().zip(gr).map(|(&p, &d)| p * (d - inner)));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), g)?)?;
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = xv.last_dim();
                let nf = T::from_usize(n).unwrap();
                let mut gx = Vec::with_capacity(xv.numel());
                let mut ggain = vec![T::zero(); n];
                let mut gbias = vec![T::zero(); n];
                for ((xr, gr), &(mean, rstd)) in xv.data().chunks(n).zip(gy.data().chunks(n)).zip(stats) {
                    let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * rstd).collect();
                    let gxhat: Vec<T> = gr.iter().zip(gv.data()).map(|(&d, &w)| d * w).collect();
                    let m1 = gxhat.iter().copied().sum::<T>() / nf;
                    let m2 = tensor::dot(&gxhat, &xhat) / nf;
                    gx.extend(gxhat.iter().zip(&xhat).map(|(&gh, &xh)| rstd * (gh - m1 - xh * m2)));
                    for j in 0..n {
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                self.accumulate(grads, *gain, Tensor::vector(ggain))?;
                self.accumulate(grads, *bias, Tensor::vector(gbias))?;
            }
            Op::Gelu { x, exact } => {
                let deriv = if *exact {
                    tensor::gelu_erf_grad::<T>
                } else {
                    tensor::gelu_tanh_grad::<T>
                };
                let g = tensor::zip_map("gelu", gy, self.value(*x), |d, v| d * deriv(v))?;
                self.accumulate(grads, *x, g)?;
            }
            Op::Tanh(x) => {
                let g = tensor::zip_map("tanh", gy, y, |d, t| d * (T::one() - t * t))?;
                self.accumulate(grads, *x, g)?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).last_dim();
                    if self.wants(p) {
                        self.accumulate(grads, p, tensor::slice_last(gy, offset, len)?)?;
                    }
                    offset += len;
                }
            }
            Op::Mean { x, axis } => {
                let xv = self.value(*x);
                let (outer, len, inner) = tensor::axis_extents(xv.shape(), *axis);
                let lf = T::from_usize(len).unwrap();
                let mut g = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            g[(o * len + a) * inner + i] = gy.data()[o * inner + i] / lf;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), g)?)?;
            }
            Op::L2Norm(x) => {
                let norm = y.item();
                if norm == T::zero() {
                    return Err(Error::ZeroNorm(None));
                }
                let d = gy.item();
                self.accumulate(grads, *x, self.value(*x).map(|v| d * v / norm))?;
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (tensor::l2_norm(av.data()), tensor::l2_norm(bv.data()));
                let (cos, d) = (y.item(), gy.item());
                if self.wants(*a) {
                    let g = tensor::zip_map("cosine", av, bv, |x, z| d * (z / (na * nb) - cos * x / (na * na)))?;
                    self.accumulate(grads, *a, g)?;
                }
                if self.wants(*b) {
                    let g = tensor::zip_map("cosine", bv, av, |z, x| d * (x / (na * nb) - cos * z / (nb * nb)))?;
                    self.accumulate(grads, *b, g)?;
                }
            }
            Op::Std(x) => {
                let xv = self.value(*x);
                let sd = y.item();
                if sd == T::zero() {
                    return Err(Error::NonFinite {
                        op: "std backward",
                        location: None,
                    });
                }
                let n = T::from_usize(xv.numel()).unwrap();
                let mean = xv.data().iter().copied().sum::<T>() / n;
                let d = gy.item();
                self.accumulate(grads, *x, xv.map(|v| d * (v - mean) / (n * sd)))?;
            }
            Op::Abs(x) => {
                let g = tensor::zip_map("abs", gy, self.value(*x), |d, v| {
                    if v > T::zero() {
                        d
                    } else if v < T::zero() {
                        -d
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, *x, g)?;
            }
            Op::Gather { table, ids } | Op::SelectRows { x: table, rows: ids } => {
                if self.wants(*table) {
                    let tv = self.value(*table);
                    let cols = tv.last_dim();
                    let mut g = Tensor::zeros(tv.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut g.data_mut()[id * cols..(id + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(gy.row(r)) {
                            *d += *s;
                        }
                    }
                    self.accumulate(grads, *table, g)?;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (cols, len) = (xv.last_dim(), gy.last_dim());
                let mut g = Tensor::zeros(xv.shape());
                for r in 0..xv.outer() {
                    g.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(gy.row(r));
                }
                self.accumulate(grads, *x, g)?;
            }
            Op::Stack(parts) => {
                let each = gy.numel() / parts.len();
                for (i, &p) in parts.iter().enumerate() {
                    if self.wants(p) {
                        let shape = self.value(p).shape().to_vec();
                        let g = Tensor::new(shape, gy.data()[i * each..(i + 1) * each].to_vec())?;
                        self.accumulate(grads, p, g)?;
                    }
                }
            }
            Op::Sum(x) => {
                let d = gy.item();
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), d))?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, gy.reshape(shape)?)?;
            }
        }
        Ok(())
    }
}

//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation of one forward pass together with its
//! value. [`Graph::backward`] then walks the tape in reverse and returns the
//! gradients of the trainable parameters that the loss reaches. Nodes that do
//! not depend on a trainable parameter are never visited on the way back, so
//! frozen sub-networks cost only their forward pass.

use std::collections::BTreeMap;

use super::params::{GradientRecord, Gradients, ParamId, ParamStore};
use super::tensor::{
    matmul_at_into, matmul_bt_into, matmul_into, softmax_slice, Tensor, PROB_FLOOR,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>, Axis),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Transpose(NodeId),
    Reshape(NodeId),
    SoftmaxRows(NodeId),
    CrossEntropy(NodeId, Vec<usize>),
    Mse(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape for one forward/backward pass, bound to the parameter store it reads.
pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, NodeId>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), params: BTreeMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Inserts a constant that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Copies a node's value into a constant, cutting the gradient path.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.constant(v)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let value = self.store.get(id).clone();
        let rg = self.store.is_trainable(id);
        let n = self.push(value, Op::Param, rg);
        self.params.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul of {:?} by {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let v = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).len() != self.value(b).len() || self.value(a).dims2() != self.value(b).dims2()
        {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds the row vector `row` (`1×n` or `n`) to every row of `a` (`m×n`).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2();
        if self.value(row).len() != n {
            return Err(Error::dim(format!(
                "row broadcast of {:?} onto {:?}",
                self.value(row).shape(),
                self.value(a).shape()
            )));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o = *o + b;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    /// `x·w + b` with `w` shaped `in×out` and `b` of length `out`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(T::tanh);
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::dim("concat_cols: row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec(), Axis::Cols), rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            return Err(Error::dim("concat_rows: column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        let v = Tensor::matrix(m, n, out)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec(), Axis::Rows), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2();
        if start + len > n || len == 0 {
            return Err(Error::dim(format!("slice {start}..{} of {n} columns", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let v = Tensor::matrix(m, len, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SliceCols(a, start), rg))
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2();
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::dim(format!("row {bad} outside {m} rows")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let v = Tensor::matrix(rows.len(), n, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::GatherRows(a, rows.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            softmax_slice(&src[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let v = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SoftmaxRows(a), rg))
    }

    /// Mean over rows of `-ln p[row, target[row]]`, probabilities floored at 1e-12.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, n) = self.value(probs).dims2();
        if targets.len() != m {
            return Err(Error::dim(format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::data(format!("class label {bad} outside {n} classes")));
        }
        let p = self.value(probs).data();
        let floor = T::of(PROB_FLOOR);
        let total: T = targets.iter().enumerate().map(|(i, &t)| -(p[i * n + t].max(floor)).ln()).sum();
        let v = Tensor::scalar(total / T::of_usize(m));
        let rg = self.rg(&[probs]);
        Ok(self.push(v, Op::CrossEntropy(probs, targets.to_vec()), rg))
    }

    /// Mean squared difference of two equally shaped nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mse")?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let s: T = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let v = Tensor::scalar(s / T::of_usize(va.len()));
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = T::of_usize(self.value(a).len());
        let v = Tensor::scalar(self.value(a).sum() / n);
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    /// `Σ cᵢ·xᵢ` over scalar nodes; zero-weight terms are skipped.
    pub fn weighted_sum(&mut self, terms: &[(T, NodeId)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(c, x) in terms {
            if c == T::zero() {
                continue;
            }
            let t = if c == T::one() { x } else { self.scale(x, c) };
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t)?,
            });
        }
        Ok(acc.unwrap_or_else(|| self.constant(Tensor::scalar(T::zero()))))
    }

    /// Gradients of a scalar `loss` with respect to every trainable parameter it reaches.
    ///
    /// Returns an empty [`Gradients`] when no trainable parameter is reachable.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(Gradients { records: Vec::new() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut records: Vec<GradientRecord<T>> = Vec::new();
        for (&pid, &node) in &self.params {
            if !self.nodes[node.0].requires_grad {
                continue;
            }
            let Some(g) = grads.get(node.0).and_then(|g| g.clone()) else { continue };
            let pos = match records.iter().position(|r| r.group == pid.group) {
                Some(p) => p,
                None => {
                    let n = self.store.group(pid.group).len();
                    records.push(GradientRecord { group: pid.group, grads: vec![None; n] });
                    records.len() - 1
                }
            };
            let shaped = g.reshape(self.store.get(pid).shape().to_vec())?;
            records[pos].grads[pid.index] = Some(shaped);
        }
        records.sort_by_key(|r| r.group);
        Ok(Gradients { records })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.dims2();
                let n = vb.cols();
                if needs(*a) {
                    let slot = slot(grads, *a, va);
                    matmul_bt_into(g.data(), vb.data(), slot.data_mut(), m, n, k);
                }
                if needs(*b) {
                    let slot = slot(grads, *b, vb);
                    matmul_at_into(va.data(), g.data(), slot.data_mut(), m, k, n);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    slot(grads, *a, self.value(*a)).add_assign(g);
                }
                if needs(*b) {
                    slot(grads, *b, self.value(*b)).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    slot(grads, *a, self.value(*a)).add_assign(g);
                }
                if needs(*b) {
                    let s = slot(grads, *b, self.value(*b));
                    for (x, &y) in s.data_mut().iter_mut().zip(g.data()) {
                        *x = *x - y;
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let vb = self.value(*b);
                    let s = slot(grads, *a, self.value(*a));
                    for ((x, &y), &w) in s.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x = *x + y * w;
                    }
                }
                if needs(*b) {
                    let va = self.value(*a);
                    let s = slot(grads, *b, self.value(*b));
                    for ((x, &y), &w) in s.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x = *x + y * w;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    slot(grads, *a, self.value(*a)).add_assign(g);
                }
                if needs(*row) {
                    let n = g.cols();
                    let s = slot(grads, *row, self.value(*row));
                    let sd = s.data_mut();
                    for r in 0..g.rows() {
                        for (x, &y) in sd.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let s = slot(grads, *a, self.value(*a));
                    for (x, &y) in s.data_mut().iter_mut().zip(g.data()) {
                        *x = *x + y * *c;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let out = &node.value;
                    let s = slot(grads, *a, self.value(*a));
                    for ((x, &y), &o) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x = *x + y * o * (T::one() - o);
                    }
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    let out = &node.value;
                    let s = slot(grads, *a, self.value(*a));
                    for ((x, &y), &o) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x = *x + y * (T::one() - o * o);
                    }
                }
            }
            Op::Concat(parts, Axis::Cols) => {
                let (m, n) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if needs(p) {
                        let s = slot(grads, p, self.value(p));
                        let sd = s.data_mut();
                        for r in 0..m {
                            let src = &g.data()[r * n + offset..r * n + offset + w];
                            for (x, &y) in sd[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *x = *x + y;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Concat(parts, Axis::Rows) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if needs(p) {
                        let s = slot(grads, p, self.value(p));
                        for (x, &y) in s.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *x = *x + y;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                if needs(*a) {
                    let (m, w) = g.dims2();
                    let n = self.value(*a).cols();
                    let s = slot(grads, *a, self.value(*a));
                    let sd = s.data_mut();
                    for r in 0..m {
                        let dst = &mut sd[r * n + start..r * n + start + w];
                        for (x, &y) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                if needs(*a) {
                    let n = g.cols();
                    let s = slot(grads, *a, self.value(*a));
                    let sd = s.data_mut();
                    for (k, &r) in rows.iter().enumerate() {
                        let dst = &mut sd[r * n..(r + 1) * n];
                        for (x, &y) in dst.iter_mut().zip(&g.data()[k * n..(k + 1) * n]) {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let gt = g.transpose();
                    let s = slot(grads, *a, self.value(*a));
                    for (x, &y) in s.data_mut().iter_mut().zip(gt.data()) {
                        *x = *x + y;
                    }
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    let s = slot(grads, *a, self.value(*a));
                    for (x, &y) in s.data_mut().iter_mut().zip(g.data()) {
                        *x = *x + y;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if needs(*a) {
                    let out = &node.value;
                    let (m, n) = out.dims2();
                    let s = slot(grads, *a, self.value(*a));
                    let sd = s.data_mut();
                    for r in 0..m {
                        let y = &out.data()[r * n..(r + 1) * n];
                        let gy = &g.data()[r * n..(r + 1) * n];
                        let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            sd[r * n + j] = sd[r * n + j] + y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy(p, targets) => {
                if needs(*p) {
                    let vp = self.value(*p);
                    let (m, n) = vp.dims2();
                    let scale = g.item() / T::of_usize(m);
                    let floor = T::of(PROB_FLOOR);
                    let s = slot(grads, *p, vp);
                    let sd = s.data_mut();
                    for (r, &t) in targets.iter().enumerate() {
                        let pv = vp.data()[r * n + t];
                        if pv > floor {
                            sd[r * n + t] = sd[r * n + t] - scale / pv;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let c = g.item() * T::of(2.0) / T::of_usize(va.len());
                if needs(*a) {
                    let s = slot(grads, *a, va);
                    for ((x, &p), &q) in s.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                        *x = *x + c * (p - q);
                    }
                }
                if needs(*b) {
                    let s = slot(grads, *b, vb);
                    for ((x, &p), &q) in s.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                        *x = *x - c * (p - q);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if needs(*a) {
                    let va = self.value(*a);
                    let c = match node.op {
                        Op::Mean(_) => g.item() / T::of_usize(va.len()),
                        _ => g.item(),
                    };
                    let s = slot(grads, *a, va);
                    for x in s.data_mut() {
                        *x = *x + c;
                    }
                }
            }
        }
    }
}

fn slot<'g, T: Scalar>(
    grads: &'g mut [Option<Tensor<T>>],
    id: NodeId,
    like: &Tensor<T>,
) -> &'g mut Tensor<T> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("p", "x", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let sq = g.mul(xn, xn).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient_at_logits() {
        let mut store = ParamStore::<f64>::new();
        let z = [0.3, -1.2, 2.0, 0.5];
        let id = store.add("p", "z", Tensor::matrix(1, 4, z.to_vec()).unwrap()).unwrap();
        let mut g = Graph::new(&store);
        let zn = g.param(id);
        let p = g.softmax_rows(zn).unwrap();
        let loss = g.cross_entropy(p, &[2]).unwrap();
        let grads = g.backward(loss).unwrap();
        let probs = g.value(p).data().to_vec();
        for (j, (&gz, &pj)) in grads.get(id).unwrap().data().iter().zip(&probs).enumerate() {
            let want = pj - if j == 2 { 1.0 } else { 0.0 };
            assert!((gz - want).abs() < 1e-12, "{gz} vs {want}");
        }
    }

    #[test]
    fn frozen_groups_receive_nothing() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", "w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = store.add("b", "w", Tensor::vector(vec![3.0, 4.0])).unwrap();
        store.train_only(&["a"]);
        let mut g = Graph::new(&store);
        let an = g.param(a);
        let bn = g.param(b);
        let prod = g.mul(an, bn).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(b).is_none());
        assert_eq!(grads.records.len(), 1);
    }

    #[test]
    fn disconnected_loss_yields_explicit_empty_result() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", "w", Tensor::vector(vec![1.0])).unwrap();
        let mut g = Graph::new(&store);
        let c = g.constant(Tensor::vector(vec![2.0, 5.0]));
        let loss = g.sum(c);
        assert!(g.backward(loss).unwrap().is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar_roots() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let c = g.constant(Tensor::vector(vec![2.0, 5.0]));
        assert!(matches!(g.backward(c), Err(Error::Dimension(_))));
    }
}

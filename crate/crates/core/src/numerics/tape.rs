//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends a node holding its output value and the
//! handles of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order of creation, so the ordering invariant is structural.
//! Parameters enter the tape through [`Tape::param`], which remembers the
//! owning [`ParamSet`] so gradients can be routed back with
//! [`Gradients::accumulate_into`].

use std::collections::HashMap;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations with a single operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Square,
}

/// Pointwise operations over two equally shaped operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Clamp(Var, f64, f64),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
    /// Test hook: deliberately corrupts the sigmoid backward rule.
    broken_sigmoid: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Records a leaf; it participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Registers tensor `idx` of `set` (once per tape). Frozen tensors
    /// become constants.
    pub fn param(&mut self, set: &ParamSet, idx: usize) -> Var {
        let key = (set.id(), idx);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let t = set.get(idx);
        let rg = t.requires_grad();
        let mut value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid shape");
        value.set_requires_grad(rg);
        let v = self.push(value, Op::Leaf, rg);
        self.params.insert(key, v);
        v
    }

    /// A constant copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shapes("elementwise", ta.shape(), tb.shape()));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary(op, a, b), rg))
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if op == UnaryOp::Log {
            if let Some(pos) = tx.data().iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain(format!(
                    "log of non-positive value {} at index {pos}",
                    tx.data()[pos]
                )));
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryOp::Log => f64::ln,
            UnaryOp::Square => |v| v * v,
        };
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Unary(op, x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    /// `x[B×n] + b[n]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (rows, cols) = tx.dims2();
        if tb.len() != cols || tb.shape().len() != 1 {
            return Err(Error::shapes("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for r in 0..rows {
            data[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(tb.data())
                .for_each(|(o, &bv)| *o += bv);
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * c).collect();
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale(x, c), rg))
    }

    /// Softmax over the last axis (each row of a matrix, or a whole vector).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2();
        let mut data = tx.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where unclamped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Clamp(x, lo, hi), rg))
    }

    /// Row lookup `table[ids[i]]`, e.g. an embedding gather.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2();
        if ids.is_empty() {
            return Err(Error::Argument("gather_rows with no indices".into()));
        }
        if let Some(pos) = ids.iter().position(|&i| i >= rows) {
            return Err(Error::Dimension(format!(
                "row index {} at position {pos} out of range for {rows} rows",
                ids[pos]
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), cols], data)?,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if t.shape().len() != 2 || len == 0 || start + len > rows {
            return Err(Error::Dimension(format!(
                "slice_rows {start}..{} of shape {:?}",
                start + len,
                t.shape()
            )));
        }
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![len, cols], data)?, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if t.shape().len() != 2 || len == 0 || start + len > cols {
            return Err(Error::Dimension(format!(
                "slice_cols {start}..{} of shape {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let rows = self.value(first).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.dims2().0 != rows {
                return Err(Error::shapes("concat_cols", self.value(first).shape(), t.shape()));
            }
            widths.push(t.dims2().1);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())
            .map_err(|_| Error::shapes("reshape", t.shape(), shape))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `(1/n) Σ (pred − truth)²` as a scalar node.
    pub fn mean_squared_error(&mut self, pred: Var, truth: Var) -> Result<Var> {
        if self.value(pred).len() != self.value(truth).len() {
            return Err(Error::Argument(format!(
                "mse length mismatch {} vs {}",
                self.value(pred).len(),
                self.value(truth).len()
            )));
        }
        let diff = self.sub(pred, truth)?;
        let sq = self.square(diff)?;
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns the gradients of every differentiable leaf; nothing is
    /// written to parameter sets until [`Gradients::accumulate_into`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut leaves = HashMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &self.nodes[idx];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    leaves.insert(Var(idx), g);
                }
            }
        }
        let params = self
            .params
            .iter()
            .filter(|(_, v)| leaves.contains_key(v))
            .map(|(&k, &v)| (k, v))
            .collect();
        Ok(Gradients { leaves, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                if self.rg(*a) {
                    let buf = slot(grads, *a, m * k);
                    gemm_nt_acc(g, tb.data(), buf, m, n, k);
                }
                if self.rg(*b) {
                    let buf = slot(grads, *b, k * n);
                    gemm_tn_acc(ta.data(), g, buf, m, k, n);
                }
            }
            Op::Binary(op, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let len = g.len();
                if self.rg(*a) {
                    let buf = slot(grads, *a, len);
                    match op {
                        BinaryOp::Add | BinaryOp::Sub => add_into(buf, g),
                        BinaryOp::Mul => {
                            for ((o, gi), bi) in buf.iter_mut().zip(g).zip(tb.data()) {
                                *o += gi * bi;
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let buf = slot(grads, *b, len);
                    match op {
                        BinaryOp::Add => add_into(buf, g),
                        BinaryOp::Sub => buf.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi),
                        BinaryOp::Mul => {
                            for ((o, gi), ai) in buf.iter_mut().zip(g).zip(ta.data()) {
                                *o += gi * ai;
                            }
                        }
                    }
                }
            }
            Op::Unary(op, x) => {
                let tx = self.value(*x);
                let buf = slot(grads, *x, g.len());
                let y = out.data();
                match op {
                    UnaryOp::Sigmoid if self.broken_sigmoid => {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += gi * 0.25;
                        }
                    }
                    UnaryOp::Sigmoid => {
                        for ((o, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    }
                    UnaryOp::Tanh => {
                        for ((o, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    }
                    UnaryOp::Relu => {
                        for ((o, gi), xi) in buf.iter_mut().zip(g).zip(tx.data()) {
                            if *xi > 0.0 {
                                *o += gi;
                            }
                        }
                    }
                    UnaryOp::Log => {
                        for ((o, gi), xi) in buf.iter_mut().zip(g).zip(tx.data()) {
                            *o += gi / xi;
                        }
                    }
                    UnaryOp::Square => {
                        for ((o, gi), xi) in buf.iter_mut().zip(g).zip(tx.data()) {
                            *o += 2.0 * gi * xi;
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.rg(*b) {
                    let cols = self.value(*b).len();
                    let buf = slot(grads, *b, cols);
                    for row in g.chunks_exact(cols) {
                        add_into(buf, row);
                    }
                }
            }
            Op::Scale(x, c) => {
                let buf = slot(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi);
            }
            Op::Softmax(x) => {
                let (_, cols) = out.dims2();
                let buf = slot(grads, *x, g.len());
                for ((o, gr), yr) in buf
                    .chunks_exact_mut(cols)
                    .zip(g.chunks_exact(cols))
                    .zip(out.data().chunks_exact(cols))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((oi, gi), yi) in o.iter_mut().zip(gr).zip(yr) {
                        *oi += yi * (gi - dot);
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                slot(grads, *x, len).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let share = g[0] / len as f64;
                slot(grads, *x, len).iter_mut().for_each(|o| *o += share);
            }
            Op::Clamp(x, lo, hi) => {
                let tx = self.value(*x);
                let buf = slot(grads, *x, g.len());
                for ((o, gi), xi) in buf.iter_mut().zip(g).zip(tx.data()) {
                    if *xi >= *lo && *xi <= *hi {
                        *o += gi;
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let t = self.value(*table);
                let cols = t.dims2().1;
                let buf = slot(grads, *table, t.len());
                for (gr, &i) in g.chunks_exact(cols).zip(ids) {
                    add_into(&mut buf[i * cols..(i + 1) * cols], gr);
                }
            }
            Op::SliceRows(x, start) => {
                let t = self.value(*x);
                let cols = t.dims2().1;
                let buf = slot(grads, *x, t.len());
                add_into(&mut buf[start * cols..start * cols + g.len()], g);
            }
            Op::SliceCols(x, start) => {
                let t = self.value(*x);
                let cols = t.dims2().1;
                let width = out.dims2().1;
                let buf = slot(grads, *x, t.len());
                for (r, gr) in g.chunks_exact(width).enumerate() {
                    add_into(&mut buf[r * cols + start..r * cols + start + width], gr);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.dims2().1;
                    if self.rg(p) {
                        let buf = slot(grads, p, tp.len());
                        for (r, gr) in g.chunks_exact(total).enumerate() {
                            add_into(&mut buf[r * w..(r + 1) * w], &gr[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
        }
    }

    #[doc(hidden)]
    pub fn break_sigmoid_backward_for_testing(&mut self) {
        self.broken_sigmoid = true;
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
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
    row.iter_mut().for_each(|v| *v /= total);
}

/// Leaf gradients produced by one [`Tape::backward`] sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Vec<f64>>,
    params: Vec<((u64, usize), Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    /// Adds this sweep's gradients into the matching tensors of `set`.
    /// Frozen tensors are skipped.
    pub fn accumulate_into(&self, set: &mut ParamSet) {
        let id = set.id();
        for &((sid, idx), v) in &self.params {
            if sid != id {
                continue;
            }
            let t = set.get_mut(idx);
            if t.requires_grad() {
                if let Some(g) = self.leaves.get(&v) {
                    t.accumulate_grad(g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn pointwise_closed_forms() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        let th = tape.tanh(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(th).data(), &[0.0]);
        let x = tape.constant(Tensor::vector(vec![-3.2, 3.2]).unwrap());
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 3.2]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![2.0, 2.0]).unwrap());
        let sa = tape.softmax(a).unwrap();
        assert_eq!(tape.value(sa).data(), &[0.5, 0.5]);

        let b = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()]).unwrap());
        let sb = tape.softmax(b).unwrap();
        let d = tape.value(sb).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);

        let c = tape.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let sc = tape.softmax(c).unwrap();
        let d = tape.value(sc).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);
    }

    #[test]
    fn mse_closed_forms() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let q = tape.constant(Tensor::vector(vec![1.0, 4.0]).unwrap());
        let l = tape.mean_squared_error(p, q).unwrap();
        assert_eq!(tape.value(l).data(), &[2.0]);
        let l0 = tape.mean_squared_error(p, p).unwrap();
        assert_eq!(tape.value(l0).data(), &[0.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn two_backward_sweeps_double_param_grads() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::vector(vec![0.3, -0.7]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&set, 0);
        let s = tape.sigmoid(w).unwrap();
        let l = tape.sum(s).unwrap();
        let g1 = tape.backward(l).unwrap();
        g1.accumulate_into(&mut set);
        let once = set.get(0).grad().unwrap().to_vec();
        tape.backward(l).unwrap().accumulate_into(&mut set);
        let twice = set.get(0).grad().unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn zero_grad_then_backward_is_idempotent() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::vector(vec![0.3, -0.7]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&set, 0);
        let y = tape.tanh(w).unwrap();
        let l = tape.sum(y).unwrap();
        let mut seen = Vec::new();
        for _ in 0..3 {
            set.zero_grads();
            tape.backward(l).unwrap().accumulate_into(&mut set);
            seen.push(set.get(0).grad().unwrap().to_vec());
        }
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::scalar(2.0));
        set.freeze();
        let mut tape = Tape::new();
        let w = tape.param(&set, 0);
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(w, x).unwrap();
        let g = tape.backward(y).unwrap();
        g.accumulate_into(&mut set);
        assert!(set.get(0).grad().is_none());
        assert_eq!(g.get(x).unwrap(), &[2.0]);
    }

    #[test]
    fn param_registered_once_per_tape() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let a = tape.param(&set, 0);
        let b = tape.param(&set, 0);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        tape.backward(y).unwrap().accumulate_into(&mut set);
        assert_eq!(set.get(0).grad().unwrap(), &[4.0]);
    }
}

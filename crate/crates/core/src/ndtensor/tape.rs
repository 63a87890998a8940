use std::sync::Arc;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{Tensor, TensorError};

/// Floor below which a row norm is treated as degenerate by
/// [`Tape::l2_normalize_rows`].
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Exp,
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Axis a reduction collapses. `Rows` collapses the row index (result is
/// `1 x cols`), `Cols` collapses the column index (result is `rows x 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
    All,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Unary(Unary, Var),
    SoftmaxRows(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    NormalizeRowSums { x: Var, sums: Vec<f64> },
    SegmentSum { x: Var, ids: Arc<[usize]> },
    GatherRows { x: Var, idx: Arc<[usize]> },
    Reduce { kind: Reduce, axis: Axis, x: Var, argmax: Vec<usize> },
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    ClampMin { x: Var, lo: f64 },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive applications for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them; [`Tape::backward`] walks the record once in
/// reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), true)
    }

    /// Records a constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), false)
    }

    fn leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Tensor::checked("matmul", ta.rows(), tb.cols(), matmul_raw(ta, tb))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::checked(op, ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the `1 x cols` row vector `bias` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(shape_err("add_row_bias", tx, tb));
        }
        let cols = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % cols])
            .collect();
        let out = Tensor::checked("add_row_bias", tx.rows(), cols, data)?;
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::checked("scale", tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::Scale(x, factor), &[x]))
    }

    /// Multiplies `x` by the value of a recorded `1 x 1` tensor.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.shape() != (1, 1) {
            return Err(shape_err("scale_by", tx, ts));
        }
        let f = ts.item();
        let data = tx.data().iter().map(|v| v * f).collect();
        let out = Tensor::checked("scale_by", tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn apply_unary(&mut self, kind: Unary, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if kind == Unary::Log {
            if let Some(i) = tx.data().iter().position(|v| *v <= 0.0) {
                return Err(TensorError::Domain {
                    row: i / tx.cols(),
                    col: i % tx.cols(),
                    value: tx.data()[i],
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |v| v.max(0.0),
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Neg => |v| -v,
        };
        let data = tx.data().iter().map(|v| f(*v)).collect();
        let op_name = match kind {
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Neg => "neg",
        };
        let out = Tensor::checked(op_name, tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::Unary(kind, x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply_unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply_unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply_unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply_unary(Unary::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply_unary(Unary::Neg, x)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for v in row {
                let e = (v - m).exp();
                total += e;
                data.push(e);
            }
            for v in &mut data[start..start + cols] {
                *v /= total;
            }
        }
        let out = Tensor::checked("softmax_rows", tx.rows(), cols, data)?;
        Ok(self.push(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Scales every row to unit L2 norm. Rows with norm below [`EPS_NORM`]
    /// are rejected.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let mut norms = Vec::with_capacity(tx.rows());
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= EPS_NORM) {
                return Err(TensorError::DegenerateRow { row: r, norm });
            }
            norms.push(norm);
            data.extend(row.iter().map(|v| v / norm));
        }
        let out = Tensor::checked("l2_normalize_rows", tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    /// Divides every row by its sum. Rows must have a positive sum.
    pub fn normalize_row_sums(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let mut sums = Vec::with_capacity(tx.rows());
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(TensorError::DegenerateRow { row: r, norm: s });
            }
            sums.push(s);
            data.extend(row.iter().map(|v| v / s));
        }
        let out = Tensor::checked("normalize_row_sums", tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::NormalizeRowSums { x, sums }, &[x]))
    }

    /// Sums rows of `x` into `num_segments` buckets chosen by `ids`,
    /// accumulating in ascending row order.
    pub fn segment_sum(
        &mut self,
        x: Var,
        ids: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if ids.len() != tx.rows() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                left: tx.shape(),
                right: (ids.len(), 1),
            });
        }
        let cols = tx.cols();
        let mut data = vec![0.0; num_segments * cols];
        for (r, &id) in ids.iter().enumerate() {
            if id >= num_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: id,
                    bound: num_segments,
                });
            }
            let dst = &mut data[id * cols..(id + 1) * cols];
            for (d, v) in dst.iter_mut().zip(tx.row(r)) {
                *d += v;
            }
        }
        let out = Tensor::checked("segment_sum", num_segments, cols, data)?;
        Ok(self.push(out, Op::SegmentSum { x, ids }, &[x]))
    }

    /// Selects rows of `x` by index (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            if i >= tx.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: tx.rows(),
                });
            }
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::from_parts(idx.len(), cols, data);
        Ok(self.push(out, Op::GatherRows { x, idx }, &[x]))
    }

    /// Sum, mean or max along an axis. Max ties resolve to the first index.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axis: Axis) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (rows, cols) = tx.shape();
        let (out_rows, out_cols, groups, group_len) = match axis {
            Axis::Rows => (1, cols, cols, rows),
            Axis::Cols => (rows, 1, rows, cols),
            Axis::All => (1, 1, 1, rows * cols),
        };
        if group_len == 0 {
            return Err(TensorError::EmptyAxis);
        }
        // element `j` of group `g` as a flat index
        let at = |g: usize, j: usize| match axis {
            Axis::Rows => j * cols + g,
            Axis::Cols => g * cols + j,
            Axis::All => j,
        };
        let d = tx.data();
        let mut out = Vec::with_capacity(groups);
        let mut argmax = Vec::new();
        for g in 0..groups {
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let mut acc = 0.0;
                    for j in 0..group_len {
                        acc += d[at(g, j)];
                    }
                    if kind == Reduce::Mean {
                        acc /= group_len as f64;
                    }
                    out.push(acc);
                }
                Reduce::Max => {
                    let mut best = 0;
                    for j in 1..group_len {
                        if d[at(g, j)] > d[at(g, best)] {
                            best = j;
                        }
                    }
                    argmax.push(at(g, best));
                    out.push(d[at(g, best)]);
                }
            }
        }
        let out = Tensor::checked("reduce", out_rows, out_cols, out)?;
        Ok(self.push(out, Op::Reduce { kind, axis, x, argmax }, &[x]))
    }

    pub fn sum(&mut self, x: Var, axis: Axis) -> Result<Var, TensorError> {
        self.reduce(Reduce::Sum, x, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var, TensorError> {
        self.reduce(Reduce::Mean, x, axis)
    }

    pub fn max(&mut self, x: Var, axis: Axis) -> Result<Var, TensorError> {
        self.reduce(Reduce::Max, x, axis)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).transpose();
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyAxis)?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(rows, cols, data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Places tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyAxis)?;
        let rows = self.value(*first).rows();
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::from_parts(rows, cols, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// `max(x, lo)` elementwise; the gradient is passed only where `x > lo`.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(lo)).collect();
        let out = Tensor::checked("clamp_min", tx.rows(), tx.cols(), data)?;
        Ok(self.push(out, Op::ClampMin { x, lo }, &[x]))
    }

    /// Backpropagates from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows, cols });
        }
        self.backward_with_seed(loss, Tensor::scalar(1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` for `output`.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor) -> Result<Gradients, TensorError> {
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err("backward_with_seed", self.value(output), &seed));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = t.data().iter().enumerate().map(|(i, v)| f(i, *v)).collect();
            Tensor::from_parts(t.rows(), t.cols(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, Tensor::from_parts(ta.rows(), ta.cols(), matmul_nt(g, tb)));
                }
                if self.requires_grad(*b) {
                    acc(*b, Tensor::from_parts(tb.rows(), tb.cols(), matmul_tn(ta, g)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map(g, &|_, v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, map(g, &|i, v| v * tb.data()[i]));
                acc(*b, map(g, &|i, v| v * ta.data()[i]));
            }
            Op::AddRowBias(x, bias) => {
                acc(*x, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*bias, Tensor::from_parts(1, cols, db));
            }
            Op::Scale(x, f) => acc(*x, map(g, &|_, v| v * f)),
            Op::ScaleBy(x, s) => {
                let tx = self.value(*x);
                let f = self.value(*s).item();
                acc(*x, map(g, &|_, v| v * f));
                let ds: f64 = g.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
                acc(*s, Tensor::scalar(ds));
            }
            Op::Unary(kind, x) => {
                let tx = self.value(*x);
                let dx = match kind {
                    Unary::Sigmoid => map(g, &|i, v| {
                        let s = y.data()[i];
                        v * s * (1.0 - s)
                    }),
                    Unary::Relu => map(g, &|i, v| if tx.data()[i] > 0.0 { v } else { 0.0 }),
                    Unary::Exp => map(g, &|i, v| v * y.data()[i]),
                    Unary::Log => map(g, &|i, v| v / tx.data()[i]),
                    Unary::Neg => map(g, &|_, v| -v),
                };
                acc(*x, dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(gv, yv)| yv * (gv - dot)));
                }
                acc(*x, Tensor::from_parts(g.rows(), g.cols(), dx));
            }
            Op::L2NormalizeRows { x, norms } => {
                // d(v/|v|) = (I - v̂v̂ᵀ) g / |v|
                let mut dx = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(gv, yv)| (gv - yv * dot) / norms[r]));
                }
                acc(*x, Tensor::from_parts(g.rows(), g.cols(), dx));
            }
            Op::NormalizeRowSums { x, sums } => {
                let mut dx = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().map(|gv| (gv - dot) / sums[r]));
                }
                acc(*x, Tensor::from_parts(g.rows(), g.cols(), dx));
            }
            Op::SegmentSum { x, ids } => {
                let cols = g.cols();
                let mut dx = Vec::with_capacity(ids.len() * cols);
                for &id in ids.iter() {
                    dx.extend_from_slice(g.row(id));
                }
                acc(*x, Tensor::from_parts(ids.len(), cols, dx));
            }
            Op::GatherRows { x, idx } => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, v) in dx[i * cols..(i + 1) * cols].iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*x, Tensor::from_parts(tx.rows(), cols, dx));
            }
            Op::Reduce { kind, axis, x, argmax } => {
                let tx = self.value(*x);
                let (rows, cols) = tx.shape();
                let mut dx = vec![0.0; tx.len()];
                match kind {
                    Reduce::Max => {
                        for (gi, &flat) in argmax.iter().enumerate() {
                            dx[flat] += g.data()[gi];
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        let n = match axis {
                            Axis::Rows => rows,
                            Axis::Cols => cols,
                            Axis::All => rows * cols,
                        } as f64;
                        let f = if *kind == Reduce::Mean { 1.0 / n } else { 1.0 };
                        for (i, d) in dx.iter_mut().enumerate() {
                            let gi = match axis {
                                Axis::Rows => i % cols,
                                Axis::Cols => i / cols,
                                Axis::All => 0,
                            };
                            *d = g.data()[gi] * f;
                        }
                    }
                }
                acc(*x, Tensor::from_parts(rows, cols, dx));
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).rows();
                    acc(*p, g.slice_rows(start, start + n));
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, pc) = self.value(*p).shape();
                    let mut dp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        dp.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    acc(*p, Tensor::from_parts(rows, pc, dp));
                    offset += pc;
                }
            }
            Op::ClampMin { x, lo } => {
                let tx = self.value(*x);
                acc(*x, map(g, &|i, v| if tx.data()[i] > *lo { v } else { 0.0 }));
            }
        }
    }
}

//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the inputs it was built from. [`Tape::backward`] walks the
//! nodes from last to first, which is a reverse topological order because a
//! node can only reference nodes recorded before it.

use std::sync::Arc;

use super::expm;
use super::matrix::{gemm_nt_acc, gemm_tn_acc, Matrix, SparseRows};
use crate::error::{Error, Result};

/// Logits at or below this value are treated as structurally masked by
/// [`Tape::softmax_rows_masked`].
pub const MASK_THRESHOLD: f64 = -1e8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseProject(Arc<SparseRows>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    MulConst(Var, Matrix),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Transpose(Var),
    RowMean(Var),
    SoftmaxRows(Var),
    MaskDiagonal(Var),
    TraceExpmHadamard {
        input: Var,
        expm: Matrix,
    },
    Sum(Var),
    AbsSum(Var),
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    UpperBlocks {
        tl: Var,
        tr: Var,
        br: Var,
    },
    FocalLoss {
        probs: Var,
        targets: Matrix,
        alpha: f64,
        gamma: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero if `v` did not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn dim(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `input · wᵀ` for a constant sparse `input` (n×d) and `w` (o×d).
    pub fn sparse_project(&mut self, input: Arc<SparseRows>, w: Var) -> Result<Var> {
        let value = input.project(self.value(w))?;
        let ng = self.ng(w);
        Ok(self.push(value, Op::SparseProject(input, w), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(dim("add_row", av, rv));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (o, r) in value.row_mut(i).iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Result<Var> {
        let value = self.value(a).add(c)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::AddConst(a), ng))
    }

    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&c)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::MulConst(a, c), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Mean over rows, producing `1×c`. An empty input yields zeros.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        let ng = self.ng(a);
        self.push(value, Op::RowMean(a), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(self.value(a), false);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise softmax in which entries at or below [`MASK_THRESHOLD`] get
    /// weight exactly zero; a row with no admissible entry becomes all zeros.
    pub fn softmax_rows_masked(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(self.value(a), true);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Overwrites the diagonal of a square matrix with `fill`; no gradient
    /// flows to the overwritten entries.
    pub fn mask_diagonal(&mut self, a: Var, fill: f64) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(dim("mask_diagonal", av, av));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            value.set(i, i, fill);
        }
        let ng = self.ng(a);
        Ok(self.push(value, Op::MaskDiagonal(a), ng))
    }

    /// `tr(exp(A ∘ A)) − n` as a `1×1` node.
    pub fn trace_expm_hadamard(&mut self, a: Var) -> Result<Var> {
        let (h, e) = expm::trace_expm_hadamard(self.value(a))?;
        let ng = self.ng(a);
        Ok(self.push(Matrix::filled(1, 1, h), Op::TraceExpmHadamard { input: a, expm: e }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v.abs()).sum();
        let ng = self.ng(a);
        self.push(Matrix::filled(1, 1, s), Op::AbsSum(a), ng)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("stack_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(dim("stack_rows", self.value(*first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::StackRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(dim("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.0].value.row(i);
                value.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: av.shape(),
                right: (start, end),
            });
        }
        let value = av.slice_rows(start, end);
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    /// Assembles `[[tl, tr], [0, br]]`.
    pub fn upper_blocks(&mut self, tl: Var, tr: Var, br: Var) -> Result<Var> {
        let (i, i2) = self.shape(tl);
        let (ti, tj) = self.shape(tr);
        let (j, j2) = self.shape(br);
        if i != i2 || j != j2 || ti != i || tj != j {
            return Err(Error::Dimension {
                op: "upper_blocks",
                left: (i, i2),
                right: (j, j2),
            });
        }
        let n = i + j;
        let mut value = Matrix::zeros(n, n);
        for r in 0..i {
            value.row_mut(r)[..i].copy_from_slice(self.nodes[tl.0].value.row(r));
            value.row_mut(r)[i..].copy_from_slice(self.nodes[tr.0].value.row(r));
        }
        for r in 0..j {
            value.row_mut(i + r)[i..].copy_from_slice(self.nodes[br.0].value.row(r));
        }
        let ng = self.ng(tl) || self.ng(tr) || self.ng(br);
        Ok(self.push(value, Op::UpperBlocks { tl, tr, br }, ng))
    }

    /// Summed binary focal loss over all entries; probabilities are clamped
    /// to `[FOCAL_CLAMP, 1 − FOCAL_CLAMP]` before taking logs.
    pub fn focal_loss(&mut self, probs: Var, targets: &Matrix, alpha: f64, gamma: f64) -> Result<Var> {
        let pv = self.value(probs);
        if pv.shape() != targets.shape() {
            return Err(dim("focal_loss", pv, targets));
        }
        let loss = focal_loss_value(pv, targets, alpha, gamma);
        let ng = self.ng(probs);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::FocalLoss {
                probs,
                targets: targets.clone(),
                alpha,
                gamma,
            },
            ng,
        ))
    }

    /// Back-propagates from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: out.shape(),
                right: (1, 1),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let acc = slot(grads, *a, val(*a).shape());
                    gemm_nt_acc(g, val(*b), acc);
                }
                if wants(*b) {
                    let acc = slot(grads, *b, val(*b).shape());
                    gemm_tn_acc(val(*a), g, acc);
                }
            }
            Op::SparseProject(input, w) => {
                if wants(*w) {
                    let acc = slot(grads, *w, val(*w).shape());
                    let d = acc.cols();
                    for i in 0..input.n_rows() {
                        let grow = g.row(i);
                        for &(k, v) in input.row(i) {
                            for (o, &go) in grow.iter().enumerate() {
                                acc.data_mut()[o * d + k] += v * go;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v) {
                        add_into(slot(grads, *v, g.shape()), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.shape()), g);
                }
                if wants(*row) {
                    let acc = slot(grads, *row, (1, g.cols()));
                    for i in 0..g.rows() {
                        for (o, x) in acc.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::AddConst(a) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.shape()), g);
                }
            }
            Op::MulConst(a, c) => {
                if wants(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for ((o, x), m) in acc.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *o += x * m;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                for (x, y) in [(a, b), (b, a)] {
                    if wants(*x) {
                        let other = val(*y);
                        let acc = slot(grads, *x, g.shape());
                        for ((o, gi), yi) in acc.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
                            *o += gi * yi;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for ((o, gi), yi) in acc.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        if *yi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for ((o, gi), yi) in acc.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for (o, gi) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += s * gi;
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    add_into(slot(grads, *a, val(*a).shape()), &g.transpose());
                }
            }
            Op::RowMean(a) => {
                if wants(*a) {
                    let rows = val(*a).rows();
                    if rows > 0 {
                        let inv = 1.0 / rows as f64;
                        let acc = slot(grads, *a, val(*a).shape());
                        for i in 0..rows {
                            for (o, gi) in acc.row_mut(i).iter_mut().zip(g.data()) {
                                *o += gi * inv;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let acc = slot(grads, *a, y.shape());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, yi), gi) in acc.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::MaskDiagonal(a) => {
                if wants(*a) {
                    let acc = slot(grads, *a, g.shape());
                    let n = g.cols();
                    for (k, (o, gi)) in acc.data_mut().iter_mut().zip(g.data()).enumerate() {
                        if k / n != k % n {
                            *o += gi;
                        }
                    }
                }
            }
            Op::TraceExpmHadamard { input, expm } => {
                if wants(*input) {
                    let a = val(*input);
                    let n = a.rows();
                    let gs = g.data()[0];
                    let acc = slot(grads, *input, a.shape());
                    for i in 0..n {
                        for j in 0..n {
                            let d = gs * expm.get(j, i) * 2.0 * a.get(i, j);
                            acc.data_mut()[i * n + j] += d;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let gs = g.data()[0];
                    let acc = slot(grads, *a, val(*a).shape());
                    acc.data_mut().iter_mut().for_each(|o| *o += gs);
                }
            }
            Op::AbsSum(a) => {
                if wants(*a) {
                    let gs = g.data()[0];
                    let x = val(*a);
                    let acc = slot(grads, *a, x.shape());
                    for (o, xi) in acc.data_mut().iter_mut().zip(x.data()) {
                        if *xi > 0.0 {
                            *o += gs;
                        } else if *xi < 0.0 {
                            *o -= gs;
                        }
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = val(*p).rows();
                    if wants(*p) {
                        add_into(slot(grads, *p, val(*p).shape()), &g.slice_rows(off, off + r));
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if wants(*p) {
                        let acc = slot(grads, *p, val(*p).shape());
                        for i in 0..g.rows() {
                            for (o, gi) in acc.row_mut(i).iter_mut().zip(&g.row(i)[off..off + c]) {
                                *o += gi;
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let acc = slot(grads, *a, val(*a).shape());
                    for i in 0..g.rows() {
                        for (o, gi) in acc.row_mut(start + i).iter_mut().zip(g.row(i)) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::UpperBlocks { tl, tr, br } => {
                let i = val(*tl).rows();
                let n = g.rows();
                if wants(*tl) {
                    let acc = slot(grads, *tl, (i, i));
                    for r in 0..i {
                        for (o, gi) in acc.row_mut(r).iter_mut().zip(&g.row(r)[..i]) {
                            *o += gi;
                        }
                    }
                }
                if wants(*tr) {
                    let acc = slot(grads, *tr, (i, n - i));
                    for r in 0..i {
                        for (o, gi) in acc.row_mut(r).iter_mut().zip(&g.row(r)[i..]) {
                            *o += gi;
                        }
                    }
                }
                if wants(*br) {
                    let acc = slot(grads, *br, (n - i, n - i));
                    for r in 0..n - i {
                        for (o, gi) in acc.row_mut(r).iter_mut().zip(&g.row(i + r)[i..]) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::FocalLoss {
                probs,
                targets,
                alpha,
                gamma,
            } => {
                if wants(*probs) {
                    let gs = g.data()[0];
                    let p = val(*probs);
                    let acc = slot(grads, *probs, p.shape());
                    for ((o, &pi), &yi) in acc.data_mut().iter_mut().zip(p.data()).zip(targets.data()) {
                        *o += gs * focal_grad(pi, yi, *alpha, *gamma);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    for (o, x) in acc.data_mut().iter_mut().zip(g.data()) {
        *o += x;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows_value(m: &Matrix, masked: bool) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if row.is_empty() || (masked && max <= MASK_THRESHOLD) {
            continue;
        }
        let orow = out.row_mut(i);
        let mut total = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            let e = if masked && x <= MASK_THRESHOLD {
                0.0
            } else {
                (x - max).exp()
            };
            *o = e;
            total += e;
        }
        orow.iter_mut().for_each(|o| *o /= total);
    }
    out
}

/// Lower clamp applied to probabilities before logs in the focal loss.
pub const FOCAL_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP)
}

pub(crate) fn focal_loss_value(p: &Matrix, y: &Matrix, alpha: f64, gamma: f64) -> f64 {
    p.data()
        .iter()
        .zip(y.data())
        .map(|(&pi, &yi)| {
            let q = clamp_prob(pi);
            let pos = alpha * yi * (1.0 - q).powf(gamma) * q.ln();
            let neg = (1.0 - alpha) * (1.0 - yi) * q.powf(gamma) * (1.0 - q).ln();
            -(pos + neg)
        })
        .sum()
}

fn focal_grad(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    if !(FOCAL_CLAMP..=1.0 - FOCAL_CLAMP).contains(&p) {
        return 0.0;
    }
    let one_m = 1.0 - p;
    let mut d = 0.0;
    if y != 0.0 {
        let pow_term = if gamma == 0.0 {
            0.0
        } else {
            gamma * one_m.powf(gamma - 1.0) * p.ln()
        };
        d -= alpha * y * (-pow_term + one_m.powf(gamma) / p);
    }
    if y != 1.0 {
        let pow_term = if gamma == 0.0 {
            0.0
        } else {
            gamma * p.powf(gamma - 1.0) * one_m.ln()
        };
        d -= (1.0 - alpha) * (1.0 - y) * (pow_term - p.powf(gamma) / one_m);
    }
    d
}

//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every node that requires one.
//! Parameters are read from a [`ParamStore`] and cached so each parameter
//! appears at most once per graph.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    Normalize { x: Var, inv_std: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, index: Vec<usize> },
    MaskRows { x: Var, keep: Vec<bool> },
    Unfold1d { x: Var, kernel: usize, pad: usize },
    Unfold2d { x: Var, geom: Conv2dGeometry },
    Sum(Var),
}

/// Spatial layout of a 2-D feature map stored as `(height·width) × channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Source row in the input map for output position `(oh, ow)` and tap
    /// `(kh, kw)`, or `None` when the tap falls into the zero padding.
    #[inline]
    fn source(&self, oh: usize, ow: usize, kh: usize, kw: usize) -> Option<usize> {
        let h = (oh * self.stride + kh).checked_sub(self.pad)?;
        let w = (ow * self.stride + kw).checked_sub(self.pad)?;
        (h < self.height && w < self.width).then_some(h * self.width + w)
    }
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Tape of one forward evaluation.
pub struct Graph<'p> {
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient for a node, `None` if it does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the loss with respect to a stored parameter.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.param_vars
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|v| self.grads[v.0].as_ref())
    }

    /// All parameter gradients that were reached, by parameter id.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.param_vars.iter().enumerate().filter_map(|(i, v)| {
            let v = (*v)?;
            self.grads[v.0].as_ref().map(|g| (ParamId::new(i), g))
        })
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The node for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Leaf, true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_transposed(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row expects a 1×n row");
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for chunk in value.as_mut_slice().chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row expects a 1×n row");
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for chunk in value.as_mut_slice().chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::fabs);
        let ng = self.ng(a);
        self.push(value, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` over columns.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let (value, inv_std) = normalize_rows(self.value(a), eps);
        let ng = self.ng(a);
        self.push(value, Op::Normalize { x: a, inv_std }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshaped(rows, cols);
        let ng = self.ng(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let ng = self.ng(a);
        self.push(value, Op::SliceRows { x: a, start }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "column slice out of range");
        let mut value = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(value, Op::SliceCols { x: a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + src.cols()].copy_from_slice(src.row(r));
            }
            offset += src.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(src.as_slice());
            rows += src.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Output row `i` is input row `index[i]`. Embedding lookup and length
    /// regulation are both expressed with this.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(index.len(), src.cols());
        for (i, &j) in index.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(j));
        }
        let ng = self.ng(a);
        self.push(
            value,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            ng,
        )
    }

    /// Zeroes rows where `keep` is false.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(keep.len(), value.rows(), "mask length mismatch");
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                value.row_mut(r).fill(0.0);
            }
        }
        let ng = self.ng(a);
        self.push(
            value,
            Op::MaskRows {
                x: a,
                keep: keep.to_vec(),
            },
            ng,
        )
    }

    /// Time-axis patch extraction for a stride-1 1-D convolution: row `t` of
    /// the result holds rows `t - pad .. t - pad + kernel` of the input laid
    /// side by side, zero outside the sequence.
    pub fn unfold1d(&mut self, a: Var, kernel: usize, pad: usize) -> Var {
        let src = self.value(a);
        let (t, c) = src.shape();
        let out_t = (t + 2 * pad + 1).saturating_sub(kernel);
        let mut value = Matrix::zeros(out_t, kernel * c);
        for o in 0..out_t {
            for k in 0..kernel {
                let Some(s) = (o + k).checked_sub(pad) else { continue };
                if s >= t {
                    continue;
                }
                value.row_mut(o)[k * c..(k + 1) * c].copy_from_slice(src.row(s));
            }
        }
        let ng = self.ng(a);
        self.push(value, Op::Unfold1d { x: a, kernel, pad }, ng)
    }

    /// Patch extraction for a 2-D convolution over a `(h·w) × c` map.
    pub fn unfold2d(&mut self, a: Var, geom: Conv2dGeometry) -> Var {
        let src = self.value(a);
        assert_eq!(
            src.shape(),
            (geom.height * geom.width, geom.channels),
            "unfold2d geometry mismatch"
        );
        let (oh_n, ow_n) = (geom.out_height(), geom.out_width());
        let c = geom.channels;
        let k = geom.kernel;
        let mut value = Matrix::zeros(oh_n * ow_n, k * k * c);
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let row = value.row_mut(oh * ow_n + ow);
                for kh in 0..k {
                    for kw in 0..k {
                        if let Some(s) = geom.source(oh, ow, kh, kw) {
                            let tap = kh * k + kw;
                            row[tap * c..(tap + 1) * c].copy_from_slice(src.row(s));
                        }
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(value, Op::Unfold2d { x: a, geom }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Affine map `x · w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let wv = self.param(w);
        let y = self.matmul(x, wv);
        match b {
            Some(b) => {
                let bv = self.param(b);
                self.add_row(y, bv)
            }
            None => y,
        }
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, y: &Matrix, gy: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, gy.matmul_transposed(self.value(*b)));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.value(*a).transposed_matmul(gy));
                }
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ ; da = gy b ; db = gyᵀ a
                if self.ng(*a) {
                    self.acc(grads, *a, gy.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, gy.transposed_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, gy.zip_map(self.value(*b), |g, v| g * v));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, gy.zip_map(self.value(*a), |g, v| g * v));
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, gy.clone());
                if self.ng(*row) {
                    self.acc(grads, *row, column_sums(gy));
                }
            }
            Op::MulRow(a, row) => {
                let (m, n) = gy.shape();
                if self.ng(*a) {
                    let r = self.value(*row).as_slice();
                    let mut g = gy.clone();
                    for chunk in g.as_mut_slice().chunks_mut(n.max(1)) {
                        for (x, s) in chunk.iter_mut().zip(r) {
                            *x *= s;
                        }
                    }
                    self.acc(grads, *a, g);
                }
                if self.ng(*row) {
                    let av = self.value(*a);
                    let mut g = Matrix::zeros(1, n);
                    for i in 0..m {
                        for (j, o) in g.as_mut_slice().iter_mut().enumerate() {
                            *o += gy[(i, j)] * av[(i, j)];
                        }
                    }
                    self.acc(grads, *row, g);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, gy.scale(*s)),
            Op::AddScalar(a) => self.acc(grads, *a, gy.clone()),
            Op::Relu(a) => {
                let g = gy.zip_map(y, |g, v| if v > 0.0 { g } else { 0.0 });
                self.acc(grads, *a, g);
            }
            Op::Tanh(a) => self.acc(grads, *a, gy.zip_map(y, |g, v| g * (1.0 - v * v))),
            Op::Sigmoid(a) => self.acc(grads, *a, gy.zip_map(y, |g, v| g * v * (1.0 - v))),
            Op::Abs(a) => {
                let g = gy.zip_map(self.value(*a), |g, v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *a, g);
            }
            Op::Square(a) => self.acc(grads, *a, gy.zip_map(self.value(*a), |g, v| 2.0 * g * v)),
            Op::SoftmaxRows(a) => {
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = gy.row(r);
                    let s: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &p), &q) in g.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - s);
                    }
                }
                self.acc(grads, *a, g);
            }
            Op::Normalize { x, inv_std } => {
                let n = y.cols() as f64;
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = gy.row(r);
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &yv), &gv) in g.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Transpose(a) => self.acc(grads, *a, gy.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.acc(grads, *a, gy.clone().reshaped(r, c));
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.shape(*x);
                let mut g = Matrix::zeros(r, c);
                g.as_mut_slice()[start * c..start * c + gy.len()].copy_from_slice(gy.as_slice());
                self.acc(grads, *x, g);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.shape(*x);
                let mut g = Matrix::zeros(r, c);
                for i in 0..r {
                    g.row_mut(i)[*start..start + gy.cols()].copy_from_slice(gy.row(i));
                }
                self.acc(grads, *x, g);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut g = Matrix::zeros(r, c);
                        for i in 0..r {
                            g.row_mut(i).copy_from_slice(&gy.row(i)[offset..offset + c]);
                        }
                        self.acc(grads, p, g);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, _) = self.shape(p);
                    if self.ng(p) {
                        self.acc(grads, p, gy.slice_rows(offset, r));
                    }
                    offset += r;
                }
            }
            Op::GatherRows { x, index } => {
                let (r, c) = self.shape(*x);
                let mut g = Matrix::zeros(r, c);
                for (i, &j) in index.iter().enumerate() {
                    for (o, v) in g.row_mut(j).iter_mut().zip(gy.row(i)) {
                        *o += v;
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::MaskRows { x, keep } => {
                let mut g = gy.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        g.row_mut(r).fill(0.0);
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Unfold1d { x, kernel, pad } => {
                let (t, c) = self.shape(*x);
                let mut g = Matrix::zeros(t, c);
                for o in 0..gy.rows() {
                    for k in 0..*kernel {
                        let Some(s) = (o + k).checked_sub(*pad) else { continue };
                        if s >= t {
                            continue;
                        }
                        let src = &gy.row(o)[k * c..(k + 1) * c];
                        for (d, v) in g.row_mut(s).iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Unfold2d { x, geom } => {
                let c = geom.channels;
                let k = geom.kernel;
                let ow_n = geom.out_width();
                let mut g = Matrix::zeros(geom.height * geom.width, c);
                for oh in 0..geom.out_height() {
                    for ow in 0..ow_n {
                        let row = gy.row(oh * ow_n + ow);
                        for kh in 0..k {
                            for kw in 0..k {
                                if let Some(s) = geom.source(oh, ow, kh, kw) {
                                    let tap = kh * k + kw;
                                    for (d, v) in
                                        g.row_mut(s).iter_mut().zip(&row[tap * c..(tap + 1) * c])
                                    {
                                        *d += v;
                                    }
                                }
                            }
                        }
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.acc(grads, *a, Matrix::filled(r, c, gy[(0, 0)]));
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub(crate) fn normalize_rows(m: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let n = m.cols() as f64;
    let mut out = m.clone();
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + eps);
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a unary graph op.
    fn check_unary(
        x: Matrix,
        build: impl Fn(&mut Graph<'_>, Var) -> Var,
    ) {
        let store = ParamStore::new();
        let probe = {
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let y = build(&mut g, xv);
            let (r, c) = g.shape(y);
            Matrix::from_vec(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect())
        };
        let eval = |x: &Matrix| {
            let mut g = Graph::new(&store);
            let xv = g.input(x.clone());
            let y = build(&mut g, xv);
            let w = g.constant(probe.clone());
            let p = g.mul(y, w);
            let s = g.sum(p);
            (g.value(s)[(0, 0)], g.backward(s).get(xv).cloned())
        };
        let (_, analytic) = eval(&x);
        let analytic = analytic.expect("input gradient");
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let numeric = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
            let a = analytic.as_slice()[i];
            let denom = libm::fmax(1.0, libm::fmax(libm::fabs(a), libm::fabs(numeric)));
            assert!(
                libm::fabs(a - numeric) / denom < 1e-6,
                "element {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| libm::sin(1.3 * i as f64 + 0.4) * 1.7)
                .collect(),
        )
    }

    #[test]
    fn softmax_and_normalize_gradients() {
        check_unary(sample(3, 5), |g, x| g.softmax_rows(x));
        check_unary(sample(3, 5), |g, x| g.normalize_rows(x, 1e-5));
        check_unary(sample(2, 4), |g, x| g.tanh(x));
        check_unary(sample(2, 4), |g, x| g.sigmoid(x));
    }

    #[test]
    fn structural_op_gradients() {
        check_unary(sample(5, 3), |g, x| g.unfold1d(x, 3, 1));
        check_unary(sample(5, 3), |g, x| g.gather_rows(x, &[0, 0, 2, 4, 4, 4]));
        check_unary(sample(4, 3), |g, x| {
            let t = g.transpose(x);
            let r = g.reshape(t, 4, 3);
            let s = g.slice_cols(r, 1, 2);
            let q = g.slice_rows(x, 1, 2);
            let q = g.reshape(q, 3, 2);
            g.concat_rows(&[s, q])
        });
        let geom = Conv2dGeometry {
            height: 5,
            width: 4,
            channels: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        check_unary(sample(20, 2), move |g, x| g.unfold2d(x, geom));
    }

    #[test]
    fn binary_op_gradients() {
        let other = sample(3, 4).map(|v| v + 0.5);
        let row = Matrix::row_vector(&[0.5, -1.0, 2.0, 0.25]);
        check_unary(sample(3, 4), |g, x| {
            let o = g.constant(other.clone());
            let r = g.constant(row.clone());
            let a = g.mul(x, o);
            let b = g.mul_row(x, r);
            let c = g.add_row(a, r);
            let d = g.matmul_t(x, o);
            let d = g.sum(d);
            let ot = g.constant(other.transpose());
            let e = g.matmul(b, ot);
            let e = g.sum(e);
            let f = g.concat_cols(&[c, b]);
            let f = g.square(f);
            let h = g.sum(f);
            let s = g.add(d, e);
            g.sub(s, h)
        });
    }
}

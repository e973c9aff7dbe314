//! Reverse-mode automatic differentiation over a per-batch operation tape.
//!
//! Every operator appends one node holding its forward value. Calling
//! [`Tape::backward`] walks the nodes in reverse, applying each operator's
//! backward rule and accumulating gradients. Only nodes that depend on a
//! parameter are differentiated; constant inputs are skipped entirely.

use std::sync::Arc;

use crate::error::NumericsError;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{axpy, dot, Tensor};

/// Additive constant applied to disallowed attention logits before softmax.
pub const MASK_NEG: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse (row, column) coordinates shared by the pair operators.
pub type Pairs = Arc<Vec<(usize, usize)>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    RowSoftmax(Var),
    LayerNorm(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    MeanRows(Var, Arc<Vec<usize>>),
    MaskedFill(Var),
    PairDot(Var, Var, Pairs),
    PairMix(Var, Var, Pairs),
    Mean(Var),
    Bce(Var, Arc<Vec<f64>>, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::RowSoftmax(..) => "row_softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::MeanRows(..) => "mean_rows",
            Op::MaskedFill(..) => "masked_fill",
            Op::PairDot(..) => "pair_dot",
            Op::PairMix(..) => "pair_mix",
            Op::Mean(..) => "mean",
            Op::Bce(..) => "bce",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation record.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
            first_non_finite: None,
        }
    }

    /// A tape that records the first operator producing NaN or infinity;
    /// [`Tape::status`] and [`Tape::backward`] then report it as an error.
    pub fn checked() -> Self {
        Self {
            check_finite: true,
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

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on a non-scalar node");
        t.data()[0]
    }

    pub fn status(&self) -> Result<(), NumericsError> {
        match self.first_non_finite {
            Some((node, op)) => Err(NumericsError::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.check_finite && self.first_non_finite.is_none() && !value.all_finite() {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(idx)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable parameter; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulNt(a, b), ng)
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert!(
            x.same_shape(y),
            "{name} shape mismatch: {:?} vs {:?}",
            x.shape(),
            y.shape()
        );
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, "add", |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, "sub", |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, "mul", |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert!(
            r.rows() == 1 && r.cols() == x.cols(),
            "add_row shape mismatch: {:?} + {:?}",
            x.shape(),
            r.shape()
        );
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert!(
            r.rows() == 1 && r.cols() == x.cols(),
            "mul_row shape mismatch: {:?} * {:?}",
            x.shape(),
            r.shape()
        );
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// `[a | b | …]` along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + t.cols()].copy_from_slice(t.row(i));
            }
            off += t.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Stacks inputs vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(x.rows(), end - start);
        for i in 0..x.rows() {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..end]);
        }
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    /// Selects (and possibly repeats) rows of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(idx.len(), x.cols());
        for (o, &i) in idx.iter().enumerate() {
            assert!(i < x.rows(), "gather_rows index {i} out of range");
            v.row_mut(o).copy_from_slice(x.row(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::RowSoftmax(a), ng)
    }

    /// Per-row standardisation `(x − mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(v, Op::LayerNorm(a, inv_std), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// Mean of the selected rows, as a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var, rows: Arc<Vec<usize>>) -> Var {
        assert!(!rows.is_empty(), "mean_rows over no rows");
        let x = self.value(a);
        let mut v = Tensor::zeros(1, x.cols());
        let w = 1.0 / rows.len() as f64;
        for &r in rows.iter() {
            axpy(w, x.row(r), v.data_mut());
        }
        let ng = self.ng(a);
        self.push(v, Op::MeanRows(a, rows), ng)
    }

    /// Adds [`MASK_NEG`] wherever `allowed` is false.
    pub fn masked_fill(&mut self, a: Var, allowed: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(allowed.len(), x.len(), "masked_fill mask size mismatch");
        let data = x
            .data()
            .iter()
            .zip(allowed)
            .map(|(&e, &ok)| if ok { e } else { e + MASK_NEG })
            .collect();
        let v = Tensor::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a);
        self.push(v, Op::MaskedFill(a), ng)
    }

    /// Sparse bilinear scores: a `rows × cols` matrix that is zero except at
    /// `pairs[p] = (i, j)`, where it holds `q_i · k_p`.
    pub fn pair_dot(&mut self, q: Var, k: Var, pairs: Pairs, cols: usize) -> Var {
        let (qv, kv) = (self.value(q), self.value(k));
        assert_eq!(qv.cols(), kv.cols(), "pair_dot width mismatch");
        assert_eq!(
            kv.rows(),
            pairs.len(),
            "pair_dot needs one key row per pair"
        );
        let mut v = Tensor::zeros(qv.rows(), cols);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let cur = v.get(i, j);
            v.set(i, j, cur + dot(qv.row(i), kv.row(p)));
        }
        let ng = self.ng(q) || self.ng(k);
        self.push(v, Op::PairDot(q, k, pairs), ng)
    }

    /// Sparse mixing: row `i` of the output is `Σ_{p: pairs[p]=(i,j)} w[i,j] · vals_p`.
    pub fn pair_mix(&mut self, w: Var, vals: Var, pairs: Pairs) -> Var {
        let (wv, vv) = (self.value(w), self.value(vals));
        assert_eq!(
            vv.rows(),
            pairs.len(),
            "pair_mix needs one value row per pair"
        );
        let mut v = Tensor::zeros(wv.rows(), vv.cols());
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let coef = wv.get(i, j);
            axpy(coef, vv.row(p), v.row_mut(i));
        }
        let ng = self.ng(w) || self.ng(vals);
        self.push(v, Op::PairMix(w, vals, pairs), ng)
    }

    /// Mean over all entries, as a `1 × 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::from_vec(1, 1, vec![m]), Op::Mean(a), ng)
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`,
    /// with `p` clamped to `[clamp, 1 − clamp]`.
    pub fn bce(&mut self, p: Var, labels: Arc<Vec<f64>>, clamp: f64) -> Var {
        let x = self.value(p);
        assert_eq!(x.len(), labels.len(), "bce label count mismatch");
        let n = labels.len() as f64;
        let loss = x
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&pr, &y)| {
                let pc = pr.clamp(clamp, 1.0 - clamp);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.ng(p);
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::Bce(p, labels, clamp),
            ng,
        )
    }

    /// Differentiates the scalar `loss` and accumulates parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Grads) -> Result<(), NumericsError> {
        self.status()?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut g: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = g[idx].take() else { continue };
            self.backprop(idx, &dy, &mut g, grads);
        }
        if self.check_finite && !grads.all_finite() {
            return Err(NumericsError::NonFinite {
                op: "backward",
                node: loss.0,
            });
        }
        Ok(())
    }

    fn backprop(&self, idx: usize, dy: &Tensor, g: &mut [Option<Tensor>], grads: &mut Grads) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.accumulate(*id, dy),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(g, *a, dy.matmul_nt(bv));
                }
                if self.ng(*b) {
                    self.acc(g, *b, av.matmul_tn(dy));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(g, *a, dy.matmul(bv));
                }
                if self.ng(*b) {
                    self.acc(g, *b, dy.matmul_tn(av));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    self.acc(g, *a, dy.clone());
                }
                if self.ng(*b) {
                    self.acc(g, *b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    self.acc(g, *a, dy.clone());
                }
                if self.ng(*b) {
                    self.acc(g, *b, dy.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(g, *a, hadamard(dy, bv));
                }
                if self.ng(*b) {
                    self.acc(g, *b, hadamard(dy, av));
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    self.acc(g, *a, dy.clone());
                }
                if self.ng(*row) {
                    self.acc(g, *row, column_sums(dy));
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.ng(*a) {
                    let mut da = dy.clone();
                    for i in 0..da.rows() {
                        for (o, r) in da.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= r;
                        }
                    }
                    self.acc(g, *a, da);
                }
                if self.ng(*row) {
                    let mut dr = Tensor::zeros(1, rv.cols());
                    for i in 0..dy.rows() {
                        for ((o, d), x) in dr.data_mut().iter_mut().zip(dy.row(i)).zip(av.row(i)) {
                            *o += d * x;
                        }
                    }
                    self.acc(g, *row, dr);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(g, *a, dy.map(|x| x * s));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Tensor::zeros(dy.rows(), w);
                        for i in 0..dy.rows() {
                            dp.row_mut(i).copy_from_slice(&dy.row(i)[off..off + w]);
                        }
                        self.acc(g, p, dp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.ng(p) {
                        let c = dy.cols();
                        let dp = Tensor::from_vec(r, c, dy.data()[off * c..(off + r) * c].to_vec());
                        self.acc(g, p, dp);
                    }
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                for i in 0..dy.rows() {
                    da.row_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row(i));
                }
                self.acc(g, *a, da);
            }
            Op::GatherRows(a, rows) => {
                let x = self.value(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                for (o, &i) in rows.iter().enumerate() {
                    axpy(1.0, dy.row(o), da.row_mut(i));
                }
                self.acc(g, *a, da);
            }
            Op::RowSoftmax(a) => {
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let s = dot(yr, dr);
                    for ((o, &yv), &dv) in da.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = yv * (dv - s);
                    }
                }
                self.acc(g, *a, da);
            }
            Op::LayerNorm(a, inv_std) => {
                let n = y.cols() as f64;
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let mean_d = dr.iter().sum::<f64>() / n;
                    let mean_dy = dot(yr, dr) / n;
                    for ((o, &yv), &dv) in da.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = inv_std[i] * (dv - mean_d - yv * mean_dy);
                    }
                }
                self.acc(g, *a, da);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&d, &xv)| if xv > 0.0 { d } else { 0.0 })
                    .collect();
                self.acc(g, *a, Tensor::from_vec(dy.rows(), dy.cols(), data));
            }
            Op::Sigmoid(a) => {
                let data = dy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&d, &s)| d * s * (1.0 - s))
                    .collect();
                self.acc(g, *a, Tensor::from_vec(dy.rows(), dy.cols(), data));
            }
            Op::MeanRows(a, rows) => {
                let x = self.value(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                let w = 1.0 / rows.len() as f64;
                for &r in rows.iter() {
                    axpy(w, dy.data(), da.row_mut(r));
                }
                self.acc(g, *a, da);
            }
            Op::MaskedFill(a) => self.acc(g, *a, dy.clone()),
            Op::PairDot(q, k, pairs) => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                if self.ng(*q) {
                    let mut dq = Tensor::zeros(qv.rows(), qv.cols());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        axpy(dy.get(i, j), kv.row(p), dq.row_mut(i));
                    }
                    self.acc(g, *q, dq);
                }
                if self.ng(*k) {
                    let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        axpy(dy.get(i, j), qv.row(i), dk.row_mut(p));
                    }
                    self.acc(g, *k, dk);
                }
            }
            Op::PairMix(w, vals, pairs) => {
                let (wv, vv) = (self.value(*w), self.value(*vals));
                if self.ng(*w) {
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        let cur = dw.get(i, j);
                        dw.set(i, j, cur + dot(dy.row(i), vv.row(p)));
                    }
                    self.acc(g, *w, dw);
                }
                if self.ng(*vals) {
                    let mut dv = Tensor::zeros(vv.rows(), vv.cols());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        axpy(wv.get(i, j), dy.row(i), dv.row_mut(p));
                    }
                    self.acc(g, *vals, dv);
                }
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let s = dy.data()[0] / x.len() as f64;
                self.acc(g, *a, Tensor::filled(x.rows(), x.cols(), s));
            }
            Op::Bce(p, labels, clamp) => {
                let x = self.value(*p);
                let n = labels.len() as f64;
                let up = dy.data()[0] / n;
                let data = x
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&pr, &yl)| {
                        if pr < *clamp || pr > 1.0 - *clamp {
                            0.0
                        } else {
                            up * (-(yl / pr) + (1.0 - yl) / (1.0 - pr))
                        }
                    })
                    .collect();
                self.acc(g, *p, Tensor::from_vec(x.rows(), x.cols(), data));
            }
        }
    }

    fn acc(&self, g: &mut [Option<Tensor>], v: Var, d: Tensor) {
        match &mut g[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
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

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for i in 0..t.rows() {
        axpy(1.0, t.row(i), out.data_mut());
    }
    out
}

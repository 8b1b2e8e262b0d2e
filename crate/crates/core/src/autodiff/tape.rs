//! Per-forward-pass gradient tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation applied to
//! its [`Var`] handles. Parameters are referenced, not copied, so building a
//! tape is cheap. [`Tape::backward`] consumes the tape and returns the
//! gradient of a scalar loss with respect to every parameter it reached.

use super::kernels::{
    gemm_nn, gemm_nt, gemm_tn, layer_norm_rows, softmax_axis, softmax_axis_backward,
};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf. Repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul")?;
        let (k2, n) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return Err(self.shape_error("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul_t")?;
        let (n, k2) = self.value(b).require_matrix("matmul_t")?;
        if k != k2 {
            return Err(self.shape_error("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_error("add", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of an `r×c` input.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(row).len() != cols {
            return Err(self.shape_error("add_row", x, row));
        }
        let r = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % cols])
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(x, row), &[x, row]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_error("mul", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        self.push(t, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::OutOfRange {
                what: "softmax axis",
                index: axis,
                limit: shape.len(),
            });
        }
        let data = softmax_axis(self.value(x).data(), &shape, axis);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(x, axis), &[x]))
    }

    /// Normalises every slice along the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        if cols == 0 {
            return Err(Error::InvalidShape {
                shape: self.shape(x).to_vec(),
                reason: "layer_norm over an empty axis".into(),
            });
        }
        if self.value(gain).len() != cols {
            return Err(self.shape_error("layer_norm gain", x, gain));
        }
        if self.value(bias).len() != cols {
            return Err(self.shape_error("layer_norm bias", x, bias));
        }
        let (out, xhat, rstd) = layer_norm_rows(
            self.value(x).data(),
            cols,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).require_matrix("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::OutOfRange {
                    what: "table row",
                    index: id,
                    limit: rows,
                });
            }
            data.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), cols], data),
            Op::Gather(table, ids.to_vec()),
            &[table],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (rows, _) = self.value(first).require_matrix("concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_cols")?;
            if r != rows {
                return Err(self.shape_error("concat_cols", first, p));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, cols) = self.value(first).require_matrix("concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_rows")?;
            if c != cols {
                return Err(self.shape_error("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).require_matrix("slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(Error::OutOfRange {
                what: "row slice end",
                index: start + len,
                limit: rows,
            });
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![len, cols], data),
            Op::SliceRows(x, start),
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Sum over rows of `-log softmax(logits[row])[targets[row]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(logits).require_matrix("cross_entropy")?;
        if targets.len() != rows {
            return Err(Error::Contract(format!(
                "cross_entropy: {rows} logit rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::OutOfRange {
                what: "cross_entropy target",
                index: bad,
                limit: cols,
            });
        }
        let probs = softmax_axis(self.value(logits).data(), &[rows, cols], 1);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -probs[r * cols + t].ln())
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of scalar `loss` with respect to every parameter on this tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::for_store(self.params);
        self.backward_into(loss, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `seed · dLoss/dθ` into `grads`, allowing accumulation over a batch.
    pub fn backward_into(self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    grads.accumulate(*id, self.params.get(*id).shape(), &g, seed);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(self.value(*a));
                    let n = self.value(*b).cols();
                    if let Some(da) = self.slot(&mut adj, *a) {
                        gemm_nt(&g, self.value(*b).data(), da, m, n, k);
                    }
                    if let Some(db) = self.slot(&mut adj, *b) {
                        gemm_tn(self.value(*a).data(), &g, db, m, k, n);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = dims2(self.value(*a));
                    let n = self.value(*b).rows();
                    if let Some(da) = self.slot(&mut adj, *a) {
                        gemm_nn(&g, self.value(*b).data(), da, m, n, k);
                    }
                    if let Some(db) = self.slot(&mut adj, *b) {
                        gemm_tn(&g, self.value(*a).data(), db, m, n, k);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = self.slot(&mut adj, v) {
                            add_assign(d, &g);
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        add_assign(dx, &g);
                    }
                    let cols = self.value(*x).cols();
                    if let Some(dr) = self.slot(&mut adj, *row) {
                        for (i, gv) in g.iter().enumerate() {
                            dr[i % cols] += gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if let Some(da) = self.slot(&mut adj, *a) {
                        for ((d, gv), bw) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gv * bw;
                        }
                    }
                    if let Some(db) = self.slot(&mut adj, *b) {
                        for ((d, gv), aw) in db.iter_mut().zip(&g).zip(av) {
                            *d += gv * aw;
                        }
                    }
                }
                Op::Scale(x, factor) => {
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += gv * factor;
                        }
                    }
                }
                Op::Relu(x) => {
                    let out = node.value.as_ref().expect("relu output").data();
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        for ((d, gv), o) in dx.iter_mut().zip(&g).zip(out) {
                            if *o > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Softmax(x, axis) => {
                    let y = node.value.as_ref().expect("softmax output");
                    let shape = y.shape().to_vec();
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        softmax_axis_backward(y.data(), &g, dx, &shape, *axis);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let cols = self.value(*x).cols();
                    let gamma = self.value(*gain).data();
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        for (r, inv) in rstd.iter().enumerate() {
                            let span = r * cols..(r + 1) * cols;
                            let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
                            let mut mean_gy = 0.0;
                            let mut mean_gyx = 0.0;
                            for c in 0..cols {
                                let gy = gr[c] * gamma[c];
                                mean_gy += gy;
                                mean_gyx += gy * xr[c];
                            }
                            mean_gy /= cols as f64;
                            mean_gyx /= cols as f64;
                            for c in 0..cols {
                                let gy = gr[c] * gamma[c];
                                dx[r * cols + c] += inv * (gy - mean_gy - xr[c] * mean_gyx);
                            }
                        }
                    }
                    if let Some(dgain) = self.slot(&mut adj, *gain) {
                        for (i, (gv, xv)) in g.iter().zip(xhat).enumerate() {
                            dgain[i % cols] += gv * xv;
                        }
                    }
                    if let Some(dbias) = self.slot(&mut adj, *bias) {
                        for (i, gv) in g.iter().enumerate() {
                            dbias[i % cols] += gv;
                        }
                    }
                }
                Op::Gather(table, ids) => {
                    let cols = self.value(*table).cols();
                    if let Some(dt) = self.slot(&mut adj, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            add_assign(
                                &mut dt[id * cols..(id + 1) * cols],
                                &g[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.as_ref().expect("concat output").cols();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if let Some(dp) = self.slot(&mut adj, p) {
                            for r in 0..rows {
                                add_assign(
                                    &mut dp[r * c..(r + 1) * c],
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if let Some(dp) = self.slot(&mut adj, p) {
                            add_assign(dp, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::SliceRows(x, start) => {
                    let cols = self.value(*x).cols();
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        add_assign(&mut dx[start * cols..start * cols + g.len()], &g);
                    }
                }
                Op::Sum(x) => {
                    if let Some(dx) = self.slot(&mut adj, *x) {
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let cols = self.value(*logits).cols();
                    if let Some(dl) = self.slot(&mut adj, *logits) {
                        for (r, &t) in targets.iter().enumerate() {
                            for c in 0..cols {
                                let onehot = if c == t { 1.0 } else { 0.0 };
                                dl[r * cols + c] += g[0] * (probs[r * cols + c] - onehot);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjoint buffer for `v`, allocated on first use; `None` when `v` needs no gradient.
    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(adj[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn shape_error(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

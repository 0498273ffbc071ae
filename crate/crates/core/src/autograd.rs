//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] outside the tape; [`Tape::backward`] accumulates exact
//! gradients into [`Param::grad`]. Constant inputs (features, propagation
//! operators, masks) never receive gradients.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::tensor::{dot, SparseMatrix, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_values",
                    left: dst.value.shape(),
                    right: src.value.shape(),
                });
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    MulConst(Var, Tensor),
    EdgeDot(Var, Var, Arc<Vec<(usize, usize)>>),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    Sqrt(Var),
    Square(Var),
    MaskedFrobenius {
        pred: Var,
        residual: Tensor,
        mask: Tensor,
    },
    PinballSum {
        pred: Var,
        target: Vec<f64>,
        q: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First op (by tape position) that produced a NaN or infinity, if any.
    pub fn non_finite(&self) -> Option<String> {
        self.first_non_finite
            .map(|(i, name)| format!("{name} (node {i})"))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true, "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg, "matmul"))
    }

    pub fn spmm(&mut self, m: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = m.matmul_dense(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpMM(Arc::clone(m), x), rg, "spmm"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg, "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg, "sub"))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg, "mul"))
    }

    /// Adds a `1 × c` row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg, "add_bias"))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg, "scale")
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(value, Op::Transpose(x), rg, "transpose")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg, "sigmoid")
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let value = self.value(x).hadamard(&c)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst(x, c), rg, "mul_const"))
    }

    /// For each pair `(i, j)`, the inner product of row `i` of `zs` with row
    /// `j` of `zt`. Output is a `pairs.len() × 1` column.
    pub fn edge_dot(&mut self, zs: Var, zt: Var, pairs: &Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let (a, b) = (self.value(zs), self.value(zt));
        if a.cols() != b.cols() {
            return Err(Error::ShapeMismatch {
                op: "edge_dot",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs.iter() {
            if i >= a.rows() || j >= b.rows() {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {} / {} embedding rows",
                    a.rows(),
                    b.rows()
                )));
            }
            out.push(dot(a.row(i), b.row(j)));
        }
        let rg = self.rg(zs) || self.rg(zt);
        Ok(self.push(
            Tensor::column(out),
            Op::EdgeDot(zs, zt, Arc::clone(pairs)),
            rg,
            "edge_dot",
        ))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &Arc<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} out of range for {} rows",
                xv.rows()
            )));
        }
        let value = xv.gather_rows(indices);
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows(x, Arc::clone(indices)),
            rg,
            "gather_rows",
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg, "sum")
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::sqrt);
        let rg = self.rg(x);
        self.push(value, Op::Sqrt(x), rg, "sqrt")
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(value, Op::Square(x), rg, "square")
    }

    /// `‖mask ⊙ pred − target‖_F` as a `1 × 1` node. Gradient reaches `pred`
    /// only through entries where `mask` is nonzero.
    pub fn masked_frobenius(&mut self, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        let residual = pv.hadamard(mask)?.sub(target)?;
        let value = Tensor::scalar(residual.frobenius_norm());
        let rg = self.rg(pred);
        Ok(self.push(
            value,
            Op::MaskedFrobenius {
                pred,
                residual,
                mask: mask.clone(),
            },
            rg,
            "masked_frobenius",
        ))
    }

    /// `Σ_i ρ_q(target_i, pred_i)` for a column of predictions.
    pub fn pinball_sum(&mut self, pred: Var, target: &[f64], q: f64) -> Result<Var> {
        let pv = self.value(pred);
        if pv.cols() != 1 || pv.rows() != target.len() {
            return Err(Error::ShapeMismatch {
                op: "pinball_sum",
                left: pv.shape(),
                right: (target.len(), 1),
            });
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &y)| crate::nn::pinball(y, p, q))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(total),
            Op::PinballSum {
                pred,
                target: target.to_vec(),
                q,
            },
            rg,
            "pinball_sum",
        ))
    }

    /// Reverse pass from the scalar node `loss`, accumulating into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if let Some(msg) = self.non_finite() {
            return Err(Error::NonFinite(msg));
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g)?,
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t_matmul(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::SpMM(m, x) => {
                    let gx = m.t_matmul_dense(&g)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.hadamard(self.value(*b))?)?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.hadamard(self.value(*a))?)?;
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb)?;
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g)?;
                    }
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s))?,
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose())?,
                Op::Relu(x) => {
                    let gx =
                        g.zip_map(
                            self.value(*x),
                            "relu_grad",
                            |g, v| if v > 0.0 { g } else { 0.0 },
                        )?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, "sigmoid_grad", |g, s| g * s * (1.0 - s))?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::MulConst(x, c) => accumulate(&mut grads, *x, g.hadamard(c)?)?,
                Op::EdgeDot(zs, zt, pairs) => {
                    let (a, b) = (self.value(*zs), self.value(*zt));
                    let mut ga = Tensor::zeros(a.rows(), a.cols());
                    let mut gb = Tensor::zeros(b.rows(), b.cols());
                    for (e, &(i, j)) in pairs.iter().enumerate() {
                        let ge = g.get(e, 0);
                        if ge == 0.0 {
                            continue;
                        }
                        for (o, v) in ga.row_mut(i).iter_mut().zip(b.row(j)) {
                            *o += ge * v;
                        }
                        for (o, v) in gb.row_mut(j).iter_mut().zip(a.row(i)) {
                            *o += ge * v;
                        }
                    }
                    if zs == zt {
                        ga.add_assign(&gb)?;
                        accumulate(&mut grads, *zs, ga)?;
                    } else {
                        if self.rg(*zs) {
                            accumulate(&mut grads, *zs, ga)?;
                        }
                        if self.rg(*zt) {
                            accumulate(&mut grads, *zt, gb)?;
                        }
                    }
                }
                Op::GatherRows(x, indices) => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::filled(r, c, g.item()))?;
                }
                Op::Sqrt(x) => {
                    let gx = g.zip_map(&node.value, "sqrt_grad", |g, s| g * 0.5 / s)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Square(x) => {
                    let gx = g.zip_map(self.value(*x), "square_grad", |g, v| 2.0 * g * v)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::MaskedFrobenius {
                    pred,
                    residual,
                    mask,
                } => {
                    let norm = node.value.item();
                    let scale = if norm > 0.0 { g.item() / norm } else { 0.0 };
                    let gx = residual.hadamard(mask)?.scale(scale);
                    accumulate(&mut grads, *pred, gx)?;
                }
                Op::PinballSum { pred, target, q } => {
                    let pv = self.value(*pred);
                    let gs = g.item();
                    let data = pv
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &y)| gs * crate::nn::pinball_grad(y, p, *q))
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::column(data))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
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

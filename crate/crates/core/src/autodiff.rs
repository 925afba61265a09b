//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive appends one record to the [`Tape`] holding its output
//! value and whatever the backward rule needs. [`Tape::backward`] walks the
//! records in reverse insertion order, which is a valid reverse topological
//! order because a record can only refer to earlier records. Gradients of
//! inputs used more than once are summed.
//!
//! Values borrowed for the tape's lifetime (features, adjacency, labels,
//! neighbor indices) are never copied.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{AutodiffError, ShapeError};
use crate::graph::NeighborIndex;
use crate::tensor::Tensor;

/// Probability clamp used by [`Tape::binary_cross_entropy`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Cow<'a, [usize]>),
    SliceRows(Var, usize),
    NeighborMean {
        z: Var,
        index: &'a NeighborIndex,
        weights: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: &'a [usize],
        mask: Cow<'a, [usize]>,
        probs: Tensor,
    },
    BinaryCrossEntropy {
        probs: Var,
        targets: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss through any
    /// differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it if it had no path to the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Input, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Input, false)
    }

    /// A non-differentiable leaf borrowed for the tape's lifetime.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Input, false)
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Scale(a, factor), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), ng))
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(ShapeError::Mismatch {
                op: "add_row",
                left: xv.shape(),
                right: bv.shape(),
            }
            .into());
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Cow::Owned(out), Op::AddRow(x, bias), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::Sigmoid(x), ng)
    }

    /// `[a ‖ b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(ShapeError::Mismatch {
                op: "concat_cols",
                left: av.shape(),
                right: bv.shape(),
            }
            .into());
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::from_vec(av.rows(), cols, data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(a, b), ng))
    }

    /// Rows of `x` listed by `indices` (repeats allowed).
    pub fn gather_rows(
        &mut self,
        x: Var,
        indices: impl Into<Cow<'a, [usize]>>,
    ) -> Result<Var, AutodiffError> {
        let indices = indices.into();
        let rows = self.value(x).rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Invalid {
                op: "gather_rows",
                message: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let out = self.value(x).gather_rows(&indices);
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::GatherRows(x, indices), ng))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(AutodiffError::Invalid {
                op: "slice_rows",
                message: format!("rows {start}..{} out of range for {}", start + len, xv.rows()),
            });
        }
        let c = xv.cols();
        let out = Tensor::from_vec(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::SliceRows(x, start), ng))
    }

    /// Row `i` becomes `(1/|N(i)|) Σ_e w_e · z[dst(e)]` over the out-edges `e`
    /// of `i`, with `w_e = 1` when `weights` is `None`. Isolated nodes get a
    /// zero row. `weights` is an `edges × 1` column in edge-id order.
    pub fn neighbor_mean(
        &mut self,
        z: Var,
        index: &'a NeighborIndex,
        weights: Option<Var>,
    ) -> Result<Var, AutodiffError> {
        let zv = self.value(z);
        if zv.rows() != index.num_nodes() {
            return Err(AutodiffError::Invalid {
                op: "neighbor_mean",
                message: format!("{} rows for {} nodes", zv.rows(), index.num_nodes()),
            });
        }
        if let Some(w) = weights {
            let shape = self.shape(w);
            if shape != (index.num_edges(), 1) {
                return Err(AutodiffError::Invalid {
                    op: "neighbor_mean",
                    message: format!(
                        "weights have shape {shape:?}, expected ({}, 1)",
                        index.num_edges()
                    ),
                });
            }
        }
        let wv = weights.map(|w| self.value(w).data());
        let mut out = Tensor::zeros(zv.rows(), zv.cols());
        for i in 0..index.num_nodes() {
            let range = index.edge_range(i);
            if range.is_empty() {
                continue;
            }
            let inv = 1.0 / range.len() as f64;
            let targets = index.targets();
            let o_row = out.row_mut(i);
            for e in range {
                let w = wv.map_or(1.0, |w| w[e]);
                for (o, v) in o_row.iter_mut().zip(zv.row(targets[e])) {
                    *o += w * v;
                }
            }
            for o in o_row.iter_mut() {
                *o *= inv;
            }
        }
        let ng = self.needs(z) || weights.is_some_and(|w| self.needs(w));
        Ok(self.push(
            Cow::Owned(out),
            Op::NeighborMean { z, index, weights },
            ng,
        ))
    }

    /// Mean over `mask` rows of `-log softmax(logits)[label]`, computed with
    /// the row maximum subtracted.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &'a [usize],
        mask: impl Into<Cow<'a, [usize]>>,
    ) -> Result<Var, AutodiffError> {
        let mask = mask.into();
        if mask.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "softmax_cross_entropy",
                message: "empty mask".into(),
            });
        }
        let lv = self.value(logits);
        let k = lv.cols();
        let mut probs = Tensor::zeros(mask.len(), k);
        let mut total = 0.0;
        for (m, &i) in mask.iter().enumerate() {
            let y = labels[i];
            if y >= k {
                return Err(AutodiffError::Invalid {
                    op: "softmax_cross_entropy",
                    message: format!("label {y} of node {i} is not below {k} classes"),
                });
            }
            let row = lv.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            for (c, p) in probs.row_mut(m).iter_mut().enumerate() {
                *p = (row[c] - max - log_sum).exp();
            }
            total += log_sum - (row[y] - max);
        }
        let loss = Tensor::scalar(total / mask.len() as f64);
        let ng = self.needs(logits);
        Ok(self.push(
            Cow::Owned(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                mask,
                probs,
            },
            ng,
        ))
    }

    /// Mean of `-[t ln p + (1-t) ln(1-p)]` with `p` clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`. `probs` is an `e × 1` column.
    pub fn binary_cross_entropy(
        &mut self,
        probs: Var,
        targets: Vec<f64>,
    ) -> Result<Var, AutodiffError> {
        if targets.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "binary_cross_entropy",
                message: "empty target list".into(),
            });
        }
        let pv = self.value(probs);
        if pv.shape() != (targets.len(), 1) {
            return Err(ShapeError::Mismatch {
                op: "binary_cross_entropy",
                left: pv.shape(),
                right: (targets.len(), 1),
            }
            .into());
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let loss = Tensor::scalar(total / targets.len() as f64);
        let ng = self.needs(probs);
        Ok(self.push(
            Cow::Owned(loss),
            Op::BinaryCrossEntropy { probs, targets },
            ng,
        ))
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Input => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).t_matmul(&g)?;
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads, *a, g.scale(*f))?;
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da = g.hadamard(self.value(*b))?;
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let db = g.hadamard(self.value(*a))?;
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, g.column_sums())?;
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g)?;
                    }
                }
                Op::Relu(x) => {
                    let out = &node.value;
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Sigmoid(x) => {
                    let out = &node.value;
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let rows = g.rows();
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(rows, ca);
                        for r in 0..rows {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(rows, cb);
                        for r in 0..rows {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    for (k, &i) in indices.iter().enumerate() {
                        for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SliceRows(x, start) => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::NeighborMean { z, index, weights } => {
                    let zv = self.value(*z);
                    let wv = weights.map(|w| self.value(w).data());
                    let need_z = self.needs(*z);
                    let need_w = weights.is_some_and(|w| self.needs(w));
                    let mut dz = need_z.then(|| Tensor::zeros(zv.rows(), zv.cols()));
                    let mut dw = need_w.then(|| Tensor::zeros(index.num_edges(), 1));
                    let targets = index.targets();
                    for i in 0..index.num_nodes() {
                        let range = index.edge_range(i);
                        if range.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / range.len() as f64;
                        let gi = g.row(i);
                        for e in range {
                            let j = targets[e];
                            if let Some(dz) = dz.as_mut() {
                                let w = wv.map_or(1.0, |w| w[e]) * inv;
                                for (d, v) in dz.row_mut(j).iter_mut().zip(gi) {
                                    *d += w * v;
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw.data_mut()[e] = crate::tensor::dot(gi, zv.row(j)) * inv;
                            }
                        }
                    }
                    if let Some(dz) = dz {
                        accumulate(&mut grads, *z, dz)?;
                    }
                    if let (Some(dw), Some(w)) = (dw, weights) {
                        accumulate(&mut grads, *w, dw)?;
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    mask,
                    probs,
                } => {
                    let (rows, cols) = self.shape(*logits);
                    let scale = g.item() / mask.len() as f64;
                    let mut dl = Tensor::zeros(rows, cols);
                    for (m, &i) in mask.iter().enumerate() {
                        let y = labels[i];
                        for (c, (d, &p)) in dl.row_mut(i).iter_mut().zip(probs.row(m)).enumerate()
                        {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            *d += scale * (p - onehot);
                        }
                    }
                    accumulate(&mut grads, *logits, dl)?;
                }
                Op::BinaryCrossEntropy { probs, targets } => {
                    let pv = self.value(*probs);
                    let scale = g.item() / targets.len() as f64;
                    let grad: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            if p < BCE_EPS || p > 1.0 - BCE_EPS {
                                0.0
                            } else {
                                scale * (-t / p + (1.0 - t) / (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *probs, Tensor::column(grad))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<(), ShapeError> {
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

/// Named parameter tensors.
pub type NamedTensors = BTreeMap<String, Tensor>;

/// Named handles of parameters placed on a tape.
pub type ParamVars = BTreeMap<String, Var>;

/// Puts every tensor of `params` on `tape` as a differentiable leaf.
pub fn bind_params<'a>(tape: &mut Tape<'a>, params: &NamedTensors) -> ParamVars {
    params
        .iter()
        .map(|(name, t)| (name.clone(), tape.param(t.clone())))
        .collect()
}

/// Worst coordinate found by [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub param: String,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of a scalar function of named parameters with
/// central differences of step `h`.
///
/// `build` records the function on a fresh tape given the bound parameters
/// and returns the `1 × 1` result. The error of a coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<'a, E, F>(
    params: &NamedTensors,
    h: f64,
    build: F,
) -> Result<GradCheck, E>
where
    E: From<AutodiffError>,
    F: Fn(&mut Tape<'a>, &ParamVars) -> Result<Var, E>,
{
    let eval = |p: &NamedTensors| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, p);
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params);
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        param: String::new(),
        coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.clone();
    for (name, value) in params {
        let analytic = grads.get_or_zeros(vars[name], value.shape());
        for c in 0..value.len() {
            let orig = value.data()[c];
            probe.get_mut(name).expect("same keys").data_mut()[c] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[c] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(AutodiffError::NonFinite {
                    param: name.clone(),
                    coordinate: c,
                }
                .into());
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[c];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > worst.max_rel_error || worst.param.is_empty() {
                worst = GradCheck {
                    max_rel_error: err,
                    param: name.clone(),
                    coordinate: c,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}

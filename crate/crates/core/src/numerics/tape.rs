//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! A [`Tape`] owns every intermediate value. Operations append nodes in
//! evaluation order, so node indices are already a topological order and
//! [`Tape::backward`] is a single reverse sweep.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
}

/// Batch-norm statistics used by a forward pass.
#[derive(Clone, Debug)]
pub enum NormStats<'a> {
    /// Normalise with statistics of the valid rows of the batch itself.
    Batch { valid_rows: &'a [bool] },
    /// Normalise with fixed (running) statistics.
    Fixed { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Act(Var, Activation),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: Option<Vec<bool>> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Focal { probs: Var, dprob: Vec<(usize, f64)> },
    MaskedMse { pred: Var, dpred: Vec<f64> },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Act(_, Activation::Gelu) => "gelu",
            Op::Act(_, Activation::Relu) => "relu",
            Op::Act(_, Activation::Identity) => "identity",
            Op::Softmax { .. } => "softmax",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNorm { .. } => "batch_norm",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::Focal { .. } => "focal_loss",
            Op::MaskedMse { .. } => "masked_mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(x) | Op::Scale(x, _) | Op::Sum(x) | Op::Act(x, _) => vec![*x],
            Op::Softmax { x, .. } | Op::MaskedSoftmax { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SliceCols { x, .. } | Op::SliceRows { x, .. } => vec![*x],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
            Op::Focal { probs, .. } => vec![*probs],
            Op::MaskedMse { pred, .. } => vec![*pred],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    cost: u64,
}

/// One entry of [`Tape::record`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordEntry {
    pub tag: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the seed with respect to `v`; zeros when `v` is unreachable.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

/// Computation record: every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Ordered (tag, inputs, output) triples.
    pub fn record(&self) -> Vec<RecordEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RecordEntry { tag: n.op.tag(), inputs: n.op.inputs(), output: Var(i) })
            .collect()
    }

    /// Scalar multiply-add count of every recorded forward operation.
    pub fn op_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.cost).sum()
    }

    /// Multiply-add count restricted to one operation tag.
    pub fn op_count_for(&self, tag: &str) -> u64 {
        self.nodes.iter().filter(|n| n.op.tag() == tag).map(|n| n.cost).sum()
    }

    fn push(&mut self, op: Op, value: Tensor, cost: u64) -> Var {
        self.nodes.push(Node { op, value, cost });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner extents differ, {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), false, self.value(b).data(), false, &mut out, m, k, n, false);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value, (m * k * n) as u64))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        let cost = value.len() as u64;
        Ok(self.push(Op::Transpose(x), value, cost))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).check_same_shape(self.value(b), "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let cost = value.len() as u64;
        Ok(self.push(Op::Add(a, b), value, cost))
    }

    /// `x[m×n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.shape(b) != [n] {
            return Err(Error::Shape(format!(
                "add_row: bias {:?} does not match {:?}",
                self.shape(b),
                self.shape(x)
            )));
        }
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..m {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        Ok(self.push(Op::AddRow(x, b), value, (m * n) as u64))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).check_same_shape(self.value(b), "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let cost = value.len() as u64;
        Ok(self.push(Op::Mul(a, b), value, cost))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let cost = value.len() as u64;
        self.push(Op::Scale(x, c), value, cost)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let cost = self.value(x).len() as u64;
        self.push(Op::Sum(x), Tensor::scalar(s), cost)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Gelu => self.value(x).map(gelu),
            Activation::Relu => self.value(x).map(|v| v.max(0.0)),
            Activation::Identity => self.value(x).clone(),
        };
        let cost = value.len() as u64;
        self.push(Op::Act(x, kind), value, cost)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    /// Softmax along `axis`, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Shape(format!("softmax: axis {axis} out of range for {:?}", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let cost = 3 * value.len() as u64;
        Ok(self.push(Op::Softmax { x, axis }, value, cost))
    }

    /// Row-wise softmax of a score matrix where columns with
    /// `key_valid[c] == false` act as `-inf` logits and receive weight 0.
    pub fn masked_softmax(&mut self, x: Var, key_valid: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        if key_valid.len() != cols {
            return Err(Error::Shape(format!(
                "masked_softmax: mask length {} for {} columns",
                key_valid.len(),
                cols
            )));
        }
        if !key_valid.iter().any(|&v| v) {
            return Err(Error::Invalid("attention mask leaves no valid key".into()));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let src = t.row(r);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let max = src
                .iter()
                .zip(key_valid)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..cols {
                if key_valid[c] {
                    let e = (src[c] - max).exp();
                    dst[c] = e;
                    total += e;
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(&[rows, cols], out)?;
        let cost = 3 * value.len() as u64;
        Ok(self.push(Op::MaskedSoftmax { x }, value, cost))
    }

    /// Per-row normalisation with population variance, then `gain·z + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        check_affine(self.shape(gain), self.shape(bias), cols, "layer_norm")?;
        let src = self.value(x).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for c in 0..cols {
                xhat[r * cols + c] = (row[c] - mean) * s;
            }
        }
        let value = affine_columns(&xhat, rows, cols, self.value(gain).data(), self.value(bias).data());
        Ok(self.push(
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            value,
            (5 * rows * cols) as u64,
        ))
    }

    /// Per-column normalisation of `x[rows×features]` followed by `gamma·z + beta`.
    ///
    /// With [`NormStats::Batch`], statistics (population variance) come from the
    /// valid rows only; invalid rows are normalised with the same statistics but
    /// do not influence them. Returns the node and the batch `(mean, var)` when
    /// batch statistics were used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let (rows, cols) = self.value(x).dims2()?;
        check_affine(self.shape(gamma), self.shape(beta), cols, "batch_norm")?;
        let src = self.value(x).data();
        let (mean, var, train) = match stats {
            NormStats::Batch { valid_rows } => {
                if valid_rows.len() != rows {
                    return Err(Error::Shape(format!(
                        "batch_norm: {} row flags for {} rows",
                        valid_rows.len(),
                        rows
                    )));
                }
                let n = valid_rows.iter().filter(|&&v| v).count();
                if n < 2 {
                    return Err(Error::BatchNorm(format!(
                        "training-mode normalisation needs at least 2 valid rows, got {n}"
                    )));
                }
                let mut mean = vec![0.0; cols];
                for r in (0..rows).filter(|&r| valid_rows[r]) {
                    for c in 0..cols {
                        mean[c] += src[r * cols + c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; cols];
                for r in (0..rows).filter(|&r| valid_rows[r]) {
                    for c in 0..cols {
                        let d = src[r * cols + c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, Some(valid_rows.to_vec()))
            }
            NormStats::Fixed { mean, var } => {
                if mean.len() != cols || var.len() != cols {
                    return Err(Error::Shape(format!(
                        "batch_norm: running statistics of length {}/{} for {} features",
                        mean.len(),
                        var.len(),
                        cols
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                xhat[r * cols + c] = (src[r * cols + c] - mean[c]) * inv_std[c];
            }
        }
        let value = affine_columns(&xhat, rows, cols, self.value(gamma).data(), self.value(beta).data());
        let batch_stats = train.as_ref().map(|_| (mean, var));
        let node = self.push(
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
            value,
            (5 * rows * cols) as u64,
        );
        Ok((node, batch_stats))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > cols {
            return Err(Error::Shape(format!("slice_cols: {start}+{len} exceeds {cols} columns")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let value = Tensor::new(&[rows, len], out)?;
        Ok(self.push(Op::SliceCols { x, start }, value, 0))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.value(xs[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.value(x).dims2()?;
            if r != rows {
                return Err(Error::Shape(format!("concat_cols: row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let value = Tensor::new(&[rows, total], out)?;
        Ok(self.push(Op::ConcatCols(xs.to_vec()), value, 0))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > rows {
            return Err(Error::Shape(format!("slice_rows: {start}+{len} exceeds {rows} rows")));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(&[len, cols], data)?;
        Ok(self.push(Op::SliceRows { x, start }, value, 0))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = self.value(xs[0]).dims2()?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, c) = self.value(x).dims2()?;
            if c != cols {
                return Err(Error::Shape(format!("concat_rows: column counts {cols} and {c} differ")));
            }
            rows += r;
            data.extend_from_slice(self.value(x).data());
        }
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(xs.to_vec()), value, 0))
    }

    /// Focal loss over the rows of a class-probability matrix.
    ///
    /// `row_weight[i]` multiplies row `i`'s term `-(1-p)^γ ln p`, where `p` is
    /// the probability of `labels[i]` clamped to `[clamp, 1-clamp]`. Callers
    /// fold class balance and the averaging denominator into the weights.
    pub fn focal_loss(
        &mut self,
        probs: Var,
        labels: &[usize],
        row_weight: &[f64],
        gamma: f64,
        clamp: f64,
    ) -> Result<Var> {
        let (rows, classes) = self.value(probs).dims2()?;
        if labels.len() != rows || row_weight.len() != rows {
            return Err(Error::Shape(format!(
                "focal_loss: {} labels / {} weights for {} rows",
                labels.len(),
                row_weight.len(),
                rows
            )));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        let mut dprob = Vec::new();
        for i in 0..rows {
            if row_weight[i] == 0.0 {
                continue;
            }
            let label = labels[i];
            if label >= classes {
                return Err(Error::Invalid(format!("label {label} with {classes} classes")));
            }
            let raw = p.get2(i, label);
            let pt = raw.clamp(clamp, 1.0 - clamp);
            let (value, deriv) = focal_term(pt, gamma);
            total += row_weight[i] * value;
            let inside = raw > clamp && raw < 1.0 - clamp;
            if inside {
                dprob.push((i * classes + label, row_weight[i] * deriv));
            }
        }
        Ok(self.push(Op::Focal { probs, dprob }, Tensor::scalar(total), (4 * rows) as u64))
    }

    /// Mean squared error over the rows flagged in `mask` and every column;
    /// zero when no row is flagged.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.value(pred).dims2()?;
        self.value(pred).check_same_shape(target, "masked_mse")?;
        if mask.len() != rows {
            return Err(Error::Shape(format!("masked_mse: {} mask flags for {} rows", mask.len(), rows)));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let mut dpred = vec![0.0; rows * cols];
        let mut total = 0.0;
        if count > 0 {
            let denom = (count * cols) as f64;
            let pv = self.value(pred).data();
            let tv = target.data();
            for r in (0..rows).filter(|&r| mask[r]) {
                for c in 0..cols {
                    let i = r * cols + c;
                    let d = pv[i] - tv[i];
                    total += d * d;
                    dpred[i] = 2.0 * d / denom;
                }
            }
            total /= denom;
        }
        Ok(self.push(Op::MaskedMse { pred, dpred }, Tensor::scalar(total), (3 * rows * cols) as u64))
    }

    /// Back-propagates from the scalar `output` through the whole record.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar seed, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(self.shape(output)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                let mut da = vec![0.0; m * k];
                gemm(g.data(), false, self.value(*b).data(), true, &mut da, m, n, k, false);
                let mut db = vec![0.0; k * n];
                gemm(self.value(*a).data(), true, g.data(), false, &mut db, k, m, n, false);
                acc(*a, Tensor::new(&[m, k], da)?);
                acc(*b, Tensor::new(&[k, n], db)?);
            }
            Op::Transpose(x) => acc(*x, g.transpose2()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, b) => {
                let (m, n) = g.dims2()?;
                let mut db = vec![0.0; n];
                for r in 0..m {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::new(&[n], db)?);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                acc(*a, Tensor::new(av.shape(), da)?);
                acc(*b, Tensor::new(bv.shape(), db)?);
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Sum(x) => {
                let s = g.item()?;
                acc(*x, Tensor::full(self.shape(*x), s));
            }
            Op::Act(x, kind) => {
                let xv = self.value(*x);
                let d: Vec<f64> = match kind {
                    Activation::Gelu => {
                        g.data().iter().zip(xv.data()).map(|(gv, &v)| gv * gelu_deriv(v)).collect()
                    }
                    Activation::Relu => g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                        .collect(),
                    Activation::Identity => g.data().to_vec(),
                };
                acc(*x, Tensor::new(xv.shape(), d)?);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| y.data()[idx(j)] * g.data()[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y.data()[idx(j)] * (g.data()[idx(j)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx)?);
            }
            Op::MaskedSoftmax { x, .. } => {
                let y = &node.value;
                let (rows, cols) = y.dims2()?;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, Tensor::new(&[rows, cols], dx)?);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = g.dims2()?;
                let gv = self.value(*gain).data();
                let (dgain, dbias) = affine_param_grads(g, xhat, rows, cols);
                let mut dx = vec![0.0; rows * cols];
                let n = cols as f64;
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = &xhat[r * cols..(r + 1) * cols];
                    let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = inv_std[r] / n * (n * dxhat[c] - s1 - xr[c] * s2);
                    }
                }
                acc(*x, Tensor::new(&[rows, cols], dx)?);
                acc(*gain, Tensor::new(&[cols], dgain)?);
                acc(*bias, Tensor::new(&[cols], dbias)?);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (rows, cols) = g.dims2()?;
                let gv = self.value(*gamma).data();
                let (dgamma, dbeta) = affine_param_grads(g, xhat, rows, cols);
                let mut dxhat = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dxhat[r * cols + c] = g.data()[r * cols + c] * gv[c];
                    }
                }
                let mut dx: Vec<f64> =
                    (0..rows * cols).map(|i| dxhat[i] * inv_std[i % cols]).collect();
                if let Some(valid) = train {
                    // Statistics depend on valid rows only, but every row's
                    // output depends on the statistics.
                    let n = valid.iter().filter(|&&v| v).count() as f64;
                    let mut s1 = vec![0.0; cols];
                    let mut s2 = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let i = r * cols + c;
                            s1[c] += dxhat[i];
                            s2[c] += dxhat[i] * xhat[i];
                        }
                    }
                    for r in (0..rows).filter(|&r| valid[r]) {
                        for c in 0..cols {
                            let i = r * cols + c;
                            dx[i] -= inv_std[c] / n * (s1[c] + xhat[i] * s2[c]);
                        }
                    }
                }
                acc(*x, Tensor::new(&[rows, cols], dx)?);
                acc(*gamma, Tensor::new(&[cols], dgamma)?);
                acc(*beta, Tensor::new(&[cols], dbeta)?);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let len = g.dims2()?.1;
                let mut dx = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    dx.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::ConcatCols(xs) => {
                let rows = g.dims2()?.0;
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).dims2()?.1;
                    let mut part = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        part.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    acc(x, Tensor::new(&[rows, c], part)?);
                    offset += c;
                }
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let mut dx = Tensor::zeros(&[rows, cols]);
                dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    let part = Tensor::new(self.shape(x), g.data()[offset..offset + n].to_vec())?;
                    acc(x, part);
                    offset += n;
                }
            }
            Op::Focal { probs, dprob } => {
                let s = g.item()?;
                let mut dp = Tensor::zeros(self.shape(*probs));
                for &(i, d) in dprob {
                    dp.data_mut()[i] += s * d;
                }
                acc(*probs, dp);
            }
            Op::MaskedMse { pred, dpred } => {
                let s = g.item()?;
                let dp = Tensor::new(self.shape(*pred), dpred.iter().map(|d| d * s).collect())?;
                acc(*pred, dp);
            }
        }
        Ok(())
    }
}

/// Exact Gaussian-CDF GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_deriv(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `(-(1-p)^γ ln p, d/dp)` of the unweighted focal term.
fn focal_term(p: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let ln_p = p.ln();
    let value = -q.powf(gamma) * ln_p;
    let mut deriv = -q.powf(gamma) / p;
    if gamma != 0.0 {
        deriv += gamma * q.powf(gamma - 1.0) * ln_p;
    }
    (value, deriv)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_affine(gain: &[usize], bias: &[usize], cols: usize, what: &str) -> Result<()> {
    if gain != [cols] || bias != [cols] {
        return Err(Error::Shape(format!(
            "{what}: gain {gain:?} / bias {bias:?} do not match {cols} features"
        )));
    }
    Ok(())
}

fn affine_columns(xhat: &[f64], rows: usize, cols: usize, gain: &[f64], bias: &[f64]) -> Tensor {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain[c] * xhat[r * cols + c] + bias[c];
        }
    }
    Tensor::new(&[rows, cols], out).expect("extents computed above")
}

fn affine_param_grads(g: &Tensor, xhat: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let gv = g.data()[r * cols + c];
            dgain[c] += gv * xhat[r * cols + c];
            dbias[c] += gv;
        }
    }
    (dgain, dbias)
}

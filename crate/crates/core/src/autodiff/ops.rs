//! Forward rules for every primitive. Each builder validates shapes, computes
//! the value eagerly and records what its backward rule needs.

use super::{BinaryKind, Broadcast, Op, Tape, Var};
use crate::error::{shape_err, CoreError, Result};
use crate::scalar::{axpy, Scalar};
use crate::tensor::matrix_dims;

/// One expert's contribution to a routed mixture: its embedding rows
/// (`emb` is `[rows.len(), width]`) are weighted by column `column` of the
/// weight matrix and added to output rows `rows`.
#[derive(Debug, Clone)]
pub struct Route {
    pub column: usize,
    pub rows: Vec<usize>,
    pub emb: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct RouteRec {
    pub(crate) column: usize,
    pub(crate) rows: Vec<usize>,
    pub(crate) emb: usize,
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<(Broadcast, Vec<usize>)> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        return Ok((Broadcast::Same, a.to_vec()));
    }
    if nb == 1 {
        return Ok((Broadcast::ScalarRhs, a.to_vec()));
    }
    if na == 1 {
        return Ok((Broadcast::ScalarLhs, b.to_vec()));
    }
    let is_row = |s: &[usize], n: usize| matches!(*s, [c] if c == n) || matches!(*s, [1, c] if c == n);
    if let [_, n] = *a {
        if is_row(b, n) {
            return Ok((Broadcast::RowRhs, a.to_vec()));
        }
    }
    if let [_, n] = *b {
        if is_row(a, n) {
            return Ok((Broadcast::RowLhs, b.to_vec()));
        }
    }
    Err(shape_err!("shapes {a:?} and {b:?} are not broadcast-compatible"))
}

#[inline]
pub(crate) fn operand_index(bcast: Broadcast, idx: usize, cols: usize) -> (usize, usize) {
    match bcast {
        Broadcast::Same => (idx, idx),
        Broadcast::ScalarRhs => (idx, 0),
        Broadcast::ScalarLhs => (0, idx),
        Broadcast::RowRhs => (idx, idx % cols),
        Broadcast::RowLhs => (idx % cols, idx),
    }
}

impl<T: Scalar> Tape<T> {
    fn unary_rg(&self, a: Var) -> Result<(usize, bool)> {
        let n = self.node(a)?;
        Ok((a.idx, n.requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (m, k) = matrix_dims(&na.shape)?;
        let (k2, n) = matrix_dims(&nb.shape)?;
        if na.shape.len() != 2 || nb.shape.len() != 2 || k != k2 {
            return Err(shape_err!("matmul {:?} x {:?}", na.shape, nb.shape));
        }
        let (av, bv) = (&na.value, &nb.value);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let x = av[i * k + l];
                if x != T::zero() {
                    axpy(x, &bv[l * n..(l + 1) * n], row);
                }
            }
        }
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a: a.idx, b: b.idx, m, k, n }))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (bcast, shape) = broadcast(&na.shape, &nb.shape)?;
        let cols = *shape.last().unwrap();
        let len: usize = shape.iter().product();
        let (av, bv) = (&na.value, &nb.value);
        let out: Vec<T> = (0..len)
            .map(|i| {
                let (ia, ib) = operand_index(bcast, i, cols);
                match kind {
                    BinaryKind::Add => av[ia] + bv[ib],
                    BinaryKind::Sub => av[ia] - bv[ib],
                    BinaryKind::Mul => av[ia] * bv[ib],
                }
            })
            .collect();
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(shape, out, rg, Op::Binary { kind, a: a.idx, b: b.idx, bcast }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let (ai, rg) = self.unary_rg(a)?;
        let node = &self.nodes[ai];
        let out = node.value.iter().map(|&x| x * c).collect();
        let shape = node.shape.clone();
        Ok(self.push(shape, out, rg, Op::Scale { a: ai, c }))
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let (ai, rg) = self.unary_rg(a)?;
        let node = &self.nodes[ai];
        let out = node.value.iter().map(|&x| f(x)).collect();
        let shape = node.shape.clone();
        Ok(self.push(shape, out, rg, op))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, |x| if x <= T::zero() { T::zero() } else { x }, Op::Relu(a.idx))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, T::exp, Op::Exp(a.idx))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.node(a)?.value.iter().find(|&&x| !(x > T::zero())) {
            return Err(CoreError::Domain(format!("log of non-positive value {x}")));
        }
        self.map_unary(a, T::ln, Op::Log(a.idx))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, |x| x * x, Op::Square(a.idx))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let (ai, rg) = self.unary_rg(a)?;
        let s = self.nodes[ai].value.iter().copied().sum();
        Ok(self.push(vec![1], vec![s], rg, Op::Sum(ai)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let (ai, rg) = self.unary_rg(a)?;
        let v = &self.nodes[ai].value;
        let s: T = v.iter().copied().sum::<T>() / T::of_usize(v.len());
        Ok(self.push(vec![1], vec![s], rg, Op::Mean(ai)))
    }

    /// Row-wise softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (ai, rg) = self.unary_rg(a)?;
        let node = &self.nodes[ai];
        let (_, cols) = matrix_dims(&node.shape)?;
        if let Some(x) = node.value.iter().find(|x| !x.is_finite()) {
            return Err(CoreError::Numeric(format!("softmax input contains {x}")));
        }
        let mut out = node.value.clone();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let shape = node.shape.clone();
        Ok(self.push(shape, out, rg, Op::Softmax { a: ai, cols }))
    }

    /// Horizontal concatenation of `[rows, w_i]` matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err!("concat of zero tensors"));
        }
        let mut rows = None;
        let mut recs = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let node = self.node(p)?;
            let (r, c) = matrix_dims(&node.shape)?;
            if node.shape.len() != 2 || rows.is_some_and(|rr| rr != r) {
                return Err(shape_err!("concat_cols: incompatible part shape {:?}", node.shape));
            }
            rows = Some(r);
            rg |= node.requires_grad;
            recs.push((p.idx, c));
        }
        let rows = rows.unwrap();
        let total: usize = recs.iter().map(|&(_, c)| c).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(idx, c) in &recs {
                out.extend_from_slice(&self.nodes[idx].value[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, total], out, rg, Op::ConcatCols { parts: recs, rows }))
    }

    /// Masked renormalization `w̃ = m ⊙ w / (Σ m ⊙ w + ε)` per row. The mask is
    /// a constant: only the support is differentiated.
    pub fn renormalize(&mut self, w: Var, mask: &[bool], eps: T) -> Result<Var> {
        let node = self.node(w)?;
        let (rows, cols) = matrix_dims(&node.shape)?;
        if mask.len() != rows * cols {
            return Err(shape_err!("mask has {} entries for weights of shape {:?}", mask.len(), node.shape));
        }
        if !(eps > T::zero()) {
            return Err(CoreError::Parameter(format!("epsilon must be positive, got {eps}")));
        }
        let mut out = vec![T::zero(); rows * cols];
        let mut denom = Vec::with_capacity(rows);
        for r in 0..rows {
            let wr = &node.value[r * cols..(r + 1) * cols];
            let mr = &mask[r * cols..(r + 1) * cols];
            let s: T = wr.iter().zip(mr).filter(|(_, &m)| m).map(|(&x, _)| x).sum();
            let d = s + eps;
            for c in 0..cols {
                if mr[c] {
                    out[r * cols + c] = wr[c] / d;
                }
            }
            denom.push(d);
        }
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        Ok(self.push(shape, out, rg, Op::Renormalize { w: w.idx, mask: mask.to_vec(), denom, cols }))
    }

    /// `out[r] = Σ_routes weights[r, route.column] * route.emb[pos]` where
    /// `route.rows[pos] == r`. Rows not covered by any route are zero.
    pub fn routed_mix(&mut self, weights: Var, routes: &[Route]) -> Result<Var> {
        let wn = self.node(weights)?;
        let (rows, cols) = matrix_dims(&wn.shape)?;
        let mut rg = wn.requires_grad;
        let mut width = None;
        let mut recs = Vec::with_capacity(routes.len());
        for route in routes {
            let en = self.node(route.emb)?;
            let (er, ec) = matrix_dims(&en.shape)?;
            if er != route.rows.len() || width.is_some_and(|w| w != ec) {
                return Err(shape_err!("routed_mix: embedding shape {:?} for {} rows", en.shape, route.rows.len()));
            }
            if route.column >= cols || route.rows.iter().any(|&r| r >= rows) {
                return Err(shape_err!("routed_mix: route out of range for weights {:?}", wn.shape));
            }
            width = Some(ec);
            rg |= en.requires_grad;
            recs.push(RouteRec { column: route.column, rows: route.rows.clone(), emb: route.emb.idx });
        }
        let width = width.ok_or_else(|| shape_err!("routed_mix needs at least one route"))?;
        let wv = &self.nodes[weights.idx].value;
        let mut out = vec![T::zero(); rows * width];
        for rec in &recs {
            let ev = &self.nodes[rec.emb].value;
            for (pos, &r) in rec.rows.iter().enumerate() {
                let wgt = wv[r * cols + rec.column];
                axpy(wgt, &ev[pos * width..(pos + 1) * width], &mut out[r * width..(r + 1) * width]);
            }
        }
        Ok(self.push(vec![rows, width], out, rg, Op::RoutedMix { weights: weights.idx, cols, width, routes: recs }))
    }

    /// Mean cross-entropy of row-wise logits against class labels, computed
    /// through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let node = self.node(logits)?;
        let (rows, cols) = matrix_dims(&node.shape)?;
        if labels.len() != rows {
            return Err(shape_err!("{} labels for {rows} logit rows", labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= cols) {
            return Err(CoreError::Index(format!("label {l} out of range for {cols} classes")));
        }
        if let Some(x) = node.value.iter().find(|x| !x.is_finite()) {
            return Err(CoreError::Numeric(format!("logits contain {x}")));
        }
        let mut probs = node.value.clone();
        let mut per_sample = Vec::with_capacity(rows);
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            per_sample.push(lse - row[labels[r]]);
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let loss = per_sample.iter().copied().sum::<T>() / T::of_usize(rows);
        let rg = node.requires_grad;
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy { logits: logits.idx, labels: labels.to_vec(), probs, per_sample },
        ))
    }

    /// Mean squared error over all elements; the per-sample loss is the mean
    /// over one row.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let node = self.node(pred)?;
        let (rows, cols) = matrix_dims(&node.shape)?;
        if target.len() != node.value.len() {
            return Err(shape_err!("mse: prediction {:?} vs {} targets", node.shape, target.len()));
        }
        let per_sample: Vec<T> = (0..rows)
            .map(|r| {
                let s: T = (r * cols..(r + 1) * cols).map(|i| (node.value[i] - target[i]).powi(2)).sum();
                s / T::of_usize(cols)
            })
            .collect();
        let loss = per_sample.iter().copied().sum::<T>() / T::of_usize(rows);
        let rg = node.requires_grad;
        Ok(self.push(vec![1], vec![loss], rg, Op::Mse { pred: pred.idx, target: target.to_vec(), per_sample }))
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s = s + *x;
    }
    for x in row.iter_mut() {
        *x = *x / s;
    }
}

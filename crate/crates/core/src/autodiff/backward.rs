use super::ops::operand_index;
use super::{BinaryKind, Op, Tape, Var};
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::scalar::{axpy, dot, Scalar};

/// Gradients of one scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; `None` when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        let g = &self.grads[v.idx];
        (!g.is_empty()).then_some(g.as_slice())
    }

    /// Add parameter-leaf gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        assert_eq!(tape.id, self.tape, "gradients belong to a different tape");
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let Op::Leaf { param: Some(id) } = node.op {
                if !g.is_empty() {
                    store.get_mut(id).accumulate_grad(g);
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Vec<T>], idx: usize, len: usize) -> &mut Vec<T> {
    let g = &mut grads[idx];
    if g.is_empty() {
        g.resize(len, T::zero());
    }
    g
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.node(output)?;
        if out.value.len() != 1 {
            return Err(CoreError::Tape(format!("backward needs a scalar output, got shape {:?}", out.shape)));
        }
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.nodes.len()];
        grads[output.idx] = vec![T::one()];
        for i in (0..=output.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || grads[i].is_empty() {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let g = &upper[0];
            self.apply_rule(&node.op, &node.value, g, lower);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn len_of(&self, idx: usize) -> usize {
        self.nodes[idx].value.len()
    }

    fn apply_rule(&self, op: &Op<T>, out: &[T], g: &[T], grads: &mut [Vec<T>]) {
        match op {
            Op::Leaf { .. } => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.rg(a) {
                    let ga = slot(grads, a, m * k);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            ga[i * k + l] = ga[i * k + l] + dot(gi, &bv[l * n..(l + 1) * n]);
                        }
                    }
                }
                if self.rg(b) {
                    let gb = slot(grads, b, k * n);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let x = av[i * k + l];
                            if x != T::zero() {
                                axpy(x, gi, &mut gb[l * n..(l + 1) * n]);
                            }
                        }
                    }
                }
            }
            &Op::Binary { kind, a, b, bcast } => {
                let cols = *self.nodes[a].shape.last().unwrap().max(self.nodes[b].shape.last().unwrap());
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.rg(a) {
                    let la = self.len_of(a);
                    let ga = slot(grads, a, la);
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = operand_index(bcast, i, cols);
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gi,
                            BinaryKind::Mul => gi * bv[ib],
                        };
                        ga[ia] = ga[ia] + d;
                    }
                }
                if self.rg(b) {
                    let lb = self.len_of(b);
                    let gb = slot(grads, b, lb);
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = operand_index(bcast, i, cols);
                        let d = match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * av[ia],
                        };
                        gb[ib] = gb[ib] + d;
                    }
                }
            }
            &Op::Scale { a, c } => {
                let ga = slot(grads, a, g.len());
                axpy(c, g, ga);
            }
            &Op::Relu(a) => {
                let av = &self.nodes[a].value;
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    if av[i] > T::zero() {
                        ga[i] = ga[i] + g[i];
                    }
                }
            }
            &Op::Exp(a) => {
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * out[i];
                }
            }
            &Op::Log(a) => {
                let av = &self.nodes[a].value;
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] / av[i];
                }
            }
            &Op::Square(a) => {
                let av = &self.nodes[a].value;
                let ga = slot(grads, a, g.len());
                let two = T::one() + T::one();
                for i in 0..g.len() {
                    ga[i] = ga[i] + two * av[i] * g[i];
                }
            }
            &Op::Sum(a) => {
                let n = self.len_of(a);
                let ga = slot(grads, a, n);
                ga.iter_mut().for_each(|x| *x = *x + g[0]);
            }
            &Op::Mean(a) => {
                let n = self.len_of(a);
                let d = g[0] / T::of_usize(n);
                let ga = slot(grads, a, n);
                ga.iter_mut().for_each(|x| *x = *x + d);
            }
            &Op::Softmax { a, cols } => {
                let ga = slot(grads, a, g.len());
                for ((yr, gr), gar) in out.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let s = dot(yr, gr);
                    for j in 0..cols {
                        gar[j] = gar[j] + yr[j] * (gr[j] - s);
                    }
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|&(_, c)| c).sum();
                let mut offset = 0;
                for &(idx, c) in parts {
                    if self.rg(idx) {
                        let gp = slot(grads, idx, rows * c);
                        for r in 0..*rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            let dst = &mut gp[r * c..(r + 1) * c];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Renormalize { w, mask, denom, cols } => {
                let (w, cols) = (*w, *cols);
                let gw = slot(grads, w, g.len());
                for (r, &d) in denom.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let s = dot(&g[span.clone()], &out[span.clone()]);
                    for i in span {
                        if mask[i] {
                            gw[i] = gw[i] + (g[i] - s) / d;
                        }
                    }
                }
            }
            Op::RoutedMix { weights, cols, width, routes } => {
                let (weights, cols, width) = (*weights, *cols, *width);
                let wv = &self.nodes[weights].value;
                if self.rg(weights) {
                    let lw = self.len_of(weights);
                    let gw = slot(grads, weights, lw);
                    for rec in routes {
                        let ev = &self.nodes[rec.emb].value;
                        for (pos, &r) in rec.rows.iter().enumerate() {
                            let d = dot(&g[r * width..(r + 1) * width], &ev[pos * width..(pos + 1) * width]);
                            gw[r * cols + rec.column] = gw[r * cols + rec.column] + d;
                        }
                    }
                }
                for rec in routes {
                    if !self.rg(rec.emb) {
                        continue;
                    }
                    let ge = slot(grads, rec.emb, rec.rows.len() * width);
                    for (pos, &r) in rec.rows.iter().enumerate() {
                        axpy(wv[r * cols + rec.column], &g[r * width..(r + 1) * width], &mut ge[pos * width..(pos + 1) * width]);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs, .. } => {
                let rows = labels.len();
                let cols = probs.len() / rows;
                let scale = g[0] / T::of_usize(rows);
                let gl = slot(grads, *logits, probs.len());
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..cols {
                        let i = r * cols + j;
                        let ind = if j == label { T::one() } else { T::zero() };
                        gl[i] = gl[i] + scale * (probs[i] - ind);
                    }
                }
            }
            Op::Mse { pred, target, .. } => {
                let pv = &self.nodes[*pred].value;
                let n = target.len();
                let scale = (g[0] + g[0]) / T::of_usize(n);
                let gp = slot(grads, *pred, n);
                for i in 0..n {
                    gp[i] = gp[i] + scale * (pv[i] - target[i]);
                }
            }
        }
    }
}

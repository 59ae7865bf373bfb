//! Gating network, top-N selection and renormalization.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, CoreError, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Three-layer relu MLP from the concatenated inputs to one logit per expert.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet {
    pub mlp: Mlp,
}

impl GatingNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, input: usize, hidden: usize, experts: usize, rng: &mut R) -> Self {
        Self { mlp: Mlp::new(store, "gate", &[input, hidden, hidden, experts], rng) }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        self.mlp.forward(tape, store, x)
    }
}

/// Gating outcome for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<T> {
    pub logits: Vec<T>,
    pub weights: Vec<T>,
    pub mask: Vec<bool>,
    pub active_set: Vec<usize>,
    pub renormalized: Vec<T>,
}

/// Gating outcome for a batch, row-major `[rows, experts]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBatch<T> {
    pub rows: usize,
    pub experts: usize,
    pub logits: Vec<T>,
    pub weights: Vec<T>,
    pub mask: Vec<bool>,
    pub renormalized: Vec<T>,
}

impl<T: Scalar> GateBatch<T> {
    pub fn decision(&self, r: usize) -> GateDecision<T> {
        let span = r * self.experts..(r + 1) * self.experts;
        let mask = self.mask[span.clone()].to_vec();
        GateDecision {
            logits: self.logits[span.clone()].to_vec(),
            weights: self.weights[span.clone()].to_vec(),
            active_set: mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect(),
            mask,
            renormalized: self.renormalized[span].to_vec(),
        }
    }
}

/// Indices of the `n` largest weights (ties to the lower index), returned in
/// ascending order, plus the matching mask.
pub fn topn_select<T: Scalar>(w: &[T], n: usize) -> Result<(Vec<usize>, Vec<bool>)> {
    if n == 0 || n > w.len() {
        return Err(CoreError::Parameter(format!("top-N with N = {n} over {} experts", w.len())));
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    // Stable sort keeps lower indices first among equal weights.
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut selected = order[..n].to_vec();
    selected.sort_unstable();
    let mut mask = vec![false; w.len()];
    selected.iter().for_each(|&i| mask[i] = true);
    Ok((selected, mask))
}

/// `w̃_d = m_d w_d / (Σ_j m_j w_j + ε)`
pub fn renormalize<T: Scalar>(w: &[T], mask: &[bool], eps: T) -> Vec<T> {
    let s: T = w.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).sum();
    let d = s + eps;
    w.iter().zip(mask).map(|(&x, &m)| if m { x / d } else { T::zero() }).collect()
}

/// `Σ_d weights[d] · embeddings[d]` on plain vectors.
pub fn fuse<T: Scalar>(embeddings: &[&[T]], weights: &[T]) -> Result<Vec<T>> {
    let width = embeddings.first().map(|e| e.len()).unwrap_or(0);
    if embeddings.len() != weights.len() || embeddings.iter().any(|e| e.len() != width) {
        return Err(shape_err!("fuse: {} embeddings, {} weights", embeddings.len(), weights.len()));
    }
    let mut z = vec![T::zero(); width];
    for (e, &w) in embeddings.iter().zip(weights) {
        for (zi, &ei) in z.iter_mut().zip(e.iter()) {
            *zi = *zi + w * ei;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topn_examples() {
        let (s, m) = topn_select(&[0.5, 0.3, 0.2], 1).unwrap();
        assert_eq!(s, vec![0]);
        assert_eq!(m, vec![true, false, false]);
        let (_, m) = topn_select(&[0.1f64; 7], 7).unwrap();
        assert!(m.iter().all(|&x| x));
        let (s, _) = topn_select(&[1.0 / 15.0f64; 15], 5).unwrap();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(topn_select(&[0.5f64, 0.5], 0).is_err());
        assert!(topn_select(&[0.5f64, 0.5], 3).is_err());
    }

    #[test]
    fn renormalize_examples() {
        let w = [0.5f64, 0.3, 0.2];
        let full = renormalize(&w, &[true; 3], 1e-12);
        assert!(full.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-9));
        let part = renormalize(&w, &[true, true, false], 1e-12);
        assert!((part[0] - 0.625).abs() < 1e-9 && (part[1] - 0.375).abs() < 1e-9 && part[2] == 0.0);
        let zero = renormalize(&[0.0f64, 0.0, 0.0], &[true, false, true], 1e-12);
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fuse_examples() {
        let a = [1.0f64, 2.0];
        let b = [-3.0, 5.0];
        assert_eq!(fuse(&[&a, &b], &[0.0, 1.0]).unwrap(), vec![-3.0, 5.0]);
        let c = [0.7f64, -0.2];
        let z = fuse(&[&c, &c, &c], &[0.2, 0.5, 0.3]).unwrap();
        assert!(z.iter().zip(&c).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!(fuse(&[&a, &[1.0][..]], &[0.5, 0.5]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn selected_weights_dominate_unselected(w in proptest::collection::vec(0.0f64..1.0, 1..20), n_frac in 0.0f64..1.0) {
                let n = 1 + ((w.len() - 1) as f64 * n_frac) as usize;
                let (s, m) = topn_select(&w, n).unwrap();
                prop_assert_eq!(s.len(), n);
                let min_sel = s.iter().map(|&i| w[i]).fold(f64::INFINITY, f64::min);
                for (i, &on) in m.iter().enumerate() {
                    if !on {
                        prop_assert!(w[i] <= min_sel);
                    }
                }
            }

            #[test]
            fn renormalized_weights_stay_on_support(raw in proptest::collection::vec(0.0f64..1.0, 2..20), n in 1usize..20) {
                let total: f64 = raw.iter().sum::<f64>() + 1e-3;
                let w: Vec<f64> = raw.iter().map(|x| (x + 1e-3 / raw.len() as f64) / total).collect();
                let n = n.min(w.len());
                let (_, m) = topn_select(&w, n).unwrap();
                let wt = renormalize(&w, &m, 1e-12);
                let s: f64 = wt.iter().sum();
                prop_assert!(wt.iter().zip(&m).all(|(&x, &on)| x >= 0.0 && (on || x == 0.0)));
                prop_assert!((1.0 - 1e-9..=1.0 + 1e-15).contains(&s));
            }
        }
    }
}

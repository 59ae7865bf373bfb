//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Anything that owns a [`ParamStore`].
pub trait HasParams<T> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

impl<T> HasParams<T> for ParamStore<T> {
    fn params(&self) -> &ParamStore<T> {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(ParamId, usize)>,
    pub coordinates: usize,
}

/// `|analytic - central| / max(1e-8, |central|)`
pub fn relative_error(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / central.abs().max(1e-8)
}

/// Compare the tape gradient of `f` against central differences on every
/// parameter coordinate accepted by `include`. Parameters are restored
/// bit-exactly afterwards.
pub fn finite_difference_check<T, M, F, I>(model: &mut M, step: f64, f: F, include: I) -> Result<GradCheckReport>
where
    T: Scalar,
    M: HasParams<T>,
    F: Fn(&M, &mut Tape<T>) -> Result<Var>,
    I: Fn(ParamId, usize) -> bool,
{
    let analytic = analytic_gradients(model, &f)?;
    central_differences(&analytic, model, step, &f, include)
}

/// Like [`finite_difference_check`], but the central differences are taken on
/// `oracle`, a copy of `model` in another (typically wider) scalar type with
/// the same parameter layout. With a double-double oracle the difference
/// quotient is free of `f64` roundoff, so even tiny gradients are compared
/// meaningfully.
pub fn finite_difference_check_with_oracle<T, U, M, N, F, G, I>(
    model: &M,
    f: F,
    oracle: &mut N,
    g: G,
    step: f64,
    include: I,
) -> Result<GradCheckReport>
where
    T: Scalar,
    U: Scalar,
    M: HasParams<T>,
    N: HasParams<U>,
    F: Fn(&M, &mut Tape<T>) -> Result<Var>,
    G: Fn(&N, &mut Tape<U>) -> Result<Var>,
    I: Fn(ParamId, usize) -> bool,
{
    let (a, o) = (model.params(), oracle.params());
    let same_layout = a.len() == o.len() && a.ids().all(|id| a.get(id).shape() == o.get(id).shape());
    if !same_layout {
        return Err(CoreError::State("oracle parameter layout differs from the model".into()));
    }
    let analytic = analytic_gradients(model, &f)?;
    central_differences(&analytic, oracle, step, &g, include)
}

fn analytic_gradients<T: Scalar, M: HasParams<T>>(model: &M, f: &impl Fn(&M, &mut Tape<T>) -> Result<Var>) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let loss = f(model, &mut tape)?;
    let grads = tape.backward(loss)?;
    let mut store = ParamStore::clone(model.params());
    store.zero_grad();
    grads.accumulate_into(&tape, &mut store);
    Ok(store.tensors().iter().map(|t| t.grad().iter().map(|g| g.to_f64_lossless()).collect()).collect())
}

fn central_differences<U, N, G, I>(analytic: &[Vec<f64>], model: &mut N, step: f64, f: &G, include: I) -> Result<GradCheckReport>
where
    U: Scalar,
    N: HasParams<U>,
    G: Fn(&N, &mut Tape<U>) -> Result<Var>,
    I: Fn(ParamId, usize) -> bool,
{
    let eval = |m: &N| -> Result<U> {
        let mut t = Tape::new();
        let v = f(m, &mut t)?;
        Ok(t.scalar(v))
    };

    let h = U::from_f64_lossy(step);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        for i in 0..model.params().get(id).len() {
            if !include(id, i) {
                continue;
            }
            let orig = model.params().get(id).values()[i];
            model.params_mut().get_mut(id).values_mut()[i] = orig + h;
            let plus = eval(model)?;
            model.params_mut().get_mut(id).values_mut()[i] = orig - h;
            let minus = eval(model)?;
            model.params_mut().get_mut(id).values_mut()[i] = orig;
            // Use the realized step so representation error in orig ± h cancels.
            let central = ((plus - minus) / ((orig + h) - (orig - h))).to_f64_lossless();
            let err = relative_error(analytic[id.index()][i], central);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, i));
            }
        }
    }
    Ok(report)
}

/// Convenience form: check every coordinate.
pub fn check_all<T, M, F>(model: &mut M, step: f64, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    M: HasParams<T>,
    F: Fn(&M, &mut Tape<T>) -> Result<Var>,
{
    finite_difference_check(model, step, f, |_, _| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_is_exact() {
        // Roundoff in f(x ± h) scales with |f| / h, so evaluate near the origin.
        let mut store = ParamStore::<f64>::new();
        let x = store.register("x", Tensor::new(&[4], vec![0.003, -0.012, 0.02, 0.007]).unwrap());
        let report = check_all(&mut store, 1e-6, |s: &ParamStore<f64>, t: &mut Tape<f64>| {
            let xv = t.param(s, x);
            let c = t.constant(&[4], vec![1.5, -2.0, 0.25, 3.0])?;
            let p = t.mul(xv, c)?;
            t.sum(p)
        })
        .unwrap();
        assert_eq!(report.coordinates, 4);
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }
}

//! Dense row-major tensor with an attached gradient buffer.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], values: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(shape_err!("shape {shape:?} must be non-empty with positive extents"));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(shape_err!("shape {shape:?} holds {n} values, got {}", values.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![T::zero(); n],
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// Element-type conversion through `f64`; gradients are reset.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossless())).collect(),
            grad: vec![U::zero(); self.values.len()],
            requires_grad: self.requires_grad,
        }
    }

    /// Same tensor flagged as a trainable parameter.
    pub fn param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Split borrow used by optimizers.
    pub fn values_and_grad_mut(&mut self) -> (&mut [T], &[T]) {
        (&mut self.values, &self.grad)
    }

    pub fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    /// `(rows, cols)` for a rank-2 tensor; a rank-1 tensor is a single row.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        matrix_dims(&self.shape)
    }
}

pub(crate) fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((1, n)),
        [m, n] => Ok((m, n)),
        _ => Err(shape_err!("expected rank 1 or 2, got shape {shape:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn zero_grad_clears() {
        let mut t = Tensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, -1.0, 4.0]);
        assert_eq!(t.grad(), &[1.0, -1.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().iter().all(|&g| g == 0.0));
        assert_eq!(t.len(), t.grad().len());
    }
}

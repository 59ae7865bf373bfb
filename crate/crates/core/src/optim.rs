//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zeroed moments laid out like `params`.
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let layout = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self { config, step_count: 0, first_moment: layout(), second_moment: layout() }
    }

    /// Apply one update in place from the gradients currently stored in
    /// `params`. Gradients are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        let tensors = params.tensors_mut();
        if tensors.len() != self.first_moment.len()
            || tensors.iter().zip(&self.first_moment).any(|(t, m)| t.len() != m.len())
            || self.first_moment.iter().zip(&self.second_moment).any(|(a, b)| a.len() != b.len())
        {
            return Err(CoreError::State("moment layout does not match parameters".into()));
        }
        self.step_count += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (lr, eps) = (T::from_f64_lossy(c.learning_rate), T::from_f64_lossy(c.eps));
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for ((tensor, m), v) in tensors.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            if !tensor.requires_grad {
                continue;
            }
            let (values, grad) = tensor.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

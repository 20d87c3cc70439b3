use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `true`: AdamW-style decay applied to the weights directly.
    /// `false`: classic L2 term added to the gradient before the moments.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            decoupled: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` using their grad buffers. Parameters
    /// without a grad buffer are treated as having zero gradient.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::State("adam: parameter set changed between steps".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "adam step {}: non-finite gradient in parameter {i} at index {j}",
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let wd = T::lit(c.weight_decay);
        let eps = T::lit(c.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); p.len()]);
            let w = p.data_mut();
            for i in 0..w.len() {
                let mut g = grad[i];
                if c.decoupled {
                    w[i] -= lr * wd * w[i];
                } else {
                    g += wd * w[i];
                }
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(w: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::from_f64(&[1], &[w]).unwrap();
        t.grad_mut()[0] = g;
        t
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = param(0.7, 0.0);
        let mut adam = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data()[0], 0.7);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut p = param(0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        adam.step(&mut [&mut p]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p.data()[0] + 1e-3).abs() < 1e-10);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = param(2.0, 0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 2.0 * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn coupled_decay_goes_through_moments() {
        let mut p = param(2.0, 0.0);
        let mut adam = AdamState::new(AdamConfig {
            decoupled: false,
            ..Default::default()
        });
        adam.step(&mut [&mut p]).unwrap();
        // g = 0.02 -> normalized step of lr
        assert!((p.data()[0] - (2.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = param(1.0, f64::NAN);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut [&mut p]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}

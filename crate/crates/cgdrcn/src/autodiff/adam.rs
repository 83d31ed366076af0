//! Adam optimizer over named parameter tensors.

use super::{Param, Scalar};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. `beta1` doubles as the "momentum" knob.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.00001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates per parameter, plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Param<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![S::zero(); p.values.len()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.values.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with bias
    /// correction. `grads` must align with `params` elementwise.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [Param<S>], grads: &[Vec<S>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam_step: {} gradient tensors for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.values.len() != g.len() {
                return Err(Error::Shape(format!(
                    "adam_step: gradient length {} does not match parameter '{}' ({})",
                    g.len(),
                    p.name,
                    p.values.len()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one = S::one();
        // Bias corrections in f64, applied as per-step constants.
        let mc = S::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
        let vc = S::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.values.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let m_hat = m[k] * mc;
                let v_hat = v[k] * vc;
                p.values[k] = p.values[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Param<f64> {
        Param::new("theta", vec![1], vec![v])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![scalar_param(1.5)];
        let mut state = AdamState::new(&params);
        state.step(&AdamConfig::default(), &mut params, &[vec![0.0]]).unwrap();
        assert_eq!(params[0].values[0], 1.5);
    }

    #[test]
    fn first_step_magnitude_is_lr_over_one_plus_eps() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut params = vec![scalar_param(0.0)];
        let mut state = AdamState::new(&params);
        state.step(&cfg, &mut params, &[vec![1.0]]).unwrap();
        // m_hat = v_hat = 1 on the first unit-gradient step.
        let expected = -cfg.lr / (1.0 + cfg.epsilon);
        assert!((params[0].values[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_independent_scalar_recurrence() {
        let cfg = AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let grads = [0.7, -0.3, 1.2];

        // Independent oracle: the textbook recurrence, written out directly.
        let mut theta = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        let mut params = vec![scalar_param(2.0)];
        let mut state = AdamState::new(&params);
        for &g in &grads {
            state.step(&cfg, &mut params, &[vec![g]]).unwrap();
        }
        assert!((params[0].values[0] - theta).abs() < 1e-10);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![scalar_param(0.0)];
        let mut state = AdamState::new(&params);
        let err = state.step(&AdamConfig::default(), &mut params, &[vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, crate::error::Error::Shape(_)));
    }
}

//! Adam with bias correction, operating on the model's canonical
//! array order. Moments live in tensors shaped exactly like the
//! parameters.

use crate::model::{Gradients, ModelConfig, ModelError, ParamTensors};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamTensors,
    pub v: ParamTensors,
}

impl AdamState {
    /// Zeroed moments for a given architecture, t = 0.
    pub fn new(model: &ModelConfig) -> Self {
        AdamState {
            config: AdamConfig::default(),
            t: 0,
            m: ParamTensors::zeros(model),
            v: ParamTensors::zeros(model),
        }
    }

    /// One update: t += 1, moment EMAs, bias-corrected step
    /// theta -= lr * m_hat / (sqrt(v_hat) + eps). lr may be zero (the
    /// moments still advance, parameters stay put).
    pub fn step(
        &mut self,
        params: &mut ParamTensors,
        grads: &Gradients,
        lr: f64,
    ) -> Result<(), ModelError> {
        assert!(lr >= 0.0, "adam: learning rate must be nonnegative");
        let theta = params.flat_mut();
        let g = grads.flat();
        let m = self.m.flat_mut();
        let v = self.v.flat_mut();
        if theta.len() != g.len() || theta.iter().zip(&g).any(|(a, b)| a.len() != b.len()) {
            return Err(ModelError::ShapeMismatch {
                op: "adam_step",
                detail: "gradient arrays do not match parameter arrays".into(),
            });
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (((th, gr), mm), vv) in theta.into_iter().zip(g).zip(m).zip(v) {
            adam_step_slice(th, gr, mm, vv, lr, c, bc1, bc2);
        }
        Ok(())
    }
}

/// The elementwise Adam rule on one array, with precomputed bias
/// corrections bc1 = 1 - beta1^t and bc2 = 1 - beta2^t.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn adam_step_slice(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    c: AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

//! Adam with the usual Keras defaults.

use serde::{Deserialize, Serialize};

use crate::model::{ArchConfig, ModelError, Params};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Params<T>,
    second: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(arch: &ArchConfig, config: AdamConfig) -> Result<Self, ModelError> {
        Ok(Adam {
            config,
            step: 0,
            first: Params::zeros(arch)?,
            second: Params::zeros(arch)?,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. The bias correction is folded into the step size:
    /// `lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)`, `p -= lr_t * m / (sqrt(v) + eps)`.
    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>, learning_rate: f64) {
        assert_eq!(params.config, grads.config, "gradient architecture");
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let lr_t = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        let (b1, b2) = (T::from_real(beta1), T::from_real(beta2));
        let (c1, c2) = (T::from_real(1.0 - beta1), T::from_real(1.0 - beta2));
        let (lr_t, eps) = (T::from_real(lr_t), T::from_real(epsilon));

        let mut p = params.tensors_mut();
        let g = grads.tensors();
        let mut m = self.first.tensors_mut();
        let mut v = self.second.tensors_mut();
        for i in 0..p.len() {
            let (p, g, m, v) = (&mut *p[i].1, g[i].1, &mut *m[i].1, &mut *v[i].1);
            for k in 0..p.len() {
                m[k] = b1 * m[k] + c1 * g[k];
                v[k] = b2 * v[k] + c2 * g[k] * g[k];
                p[k] = p[k] - lr_t * m[k] / (v[k].sqrt() + eps);
            }
        }
    }
}

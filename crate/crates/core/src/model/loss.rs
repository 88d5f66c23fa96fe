use serde::{Deserialize, Serialize};

use super::network::{Batch, ForwardPass};
use super::Params;
use crate::tensor::{bce_with_logits, Scalar};

/// KL divergence of `N(mean, exp(log_variance))` from the standard normal,
/// summed over dimensions: `-0.5 * sum(1 + lv - mean^2 - exp(lv))`.
pub fn kl_divergence<T: Scalar>(mean: &[T], log_variance: &[T]) -> T {
    let half = T::from_real(0.5);
    mean.iter()
        .zip(log_variance)
        .map(|(m, lv)| -half * (T::one() + *lv - *m * *m - lv.exp()))
        .sum()
}

/// Batch means of each loss term; `total` is what training minimises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub type_reconstruction: f64,
    pub kl: f64,
}

impl<T: Scalar> Params<T> {
    /// Per-sample sum of image cross-entropy (logits vs HSV targets), type
    /// cross-entropy (logits vs the type vector clamped to [0, 1], when
    /// enabled) and KL; averaged over the batch.
    pub fn loss(&self, batch: &Batch<'_, T>, pass: &ForwardPass<T>) -> LossBreakdown {
        let c = &self.config;
        let b = batch.size as f64;
        let reconstruction: f64 = pass
            .decoder
            .image_logits
            .iter()
            .zip(batch.images)
            .map(|(z, y)| bce_with_logits(*z, *y).real())
            .sum::<f64>()
            / b;
        let type_reconstruction = if c.type_loss {
            pass.decoder
                .type_logits
                .iter()
                .zip(batch.types)
                .map(|(z, t)| bce_with_logits(*z, t.max(T::zero()).min(T::one())).real())
                .sum::<f64>()
                / b
        } else {
            0.0
        };
        let kl = kl_divergence(&pass.encoder.mean, &pass.encoder.log_variance).real() / b;
        LossBreakdown {
            total: reconstruction + type_reconstruction + kl,
            reconstruction,
            type_reconstruction,
            kl,
        }
    }
}

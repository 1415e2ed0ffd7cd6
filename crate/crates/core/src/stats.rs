//! Running normalization of feature norms and certainty ratios.
//!
//! The adaptive margins consume two per-sample signals: the raw embedding
//! norm and the certainty ratio (cosine to the true class center over a
//! guarded cosine to the nearest negative center). Both are standardized
//! against EMA-tracked batch statistics and clipped to [-1, 1] before they
//! modulate the margin.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Standard deviations below this are treated as degenerate; normalization
/// then returns the neutral point 0 instead of dividing by ~0.
pub const SIGMA_GUARD: f64 = 1e-6;

/// EMA-tracked mean/std of feature norms and certainty ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub mu_z: f64,
    pub sigma_z: f64,
    pub mu_cr: f64,
    pub sigma_cr: f64,
    pub ema_momentum: f64,
    /// False until the first `ema_update`; normalization returns 0 until then.
    pub initialized: bool,
}

impl NormalizerState {
    pub fn new(ema_momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_momentum) || ema_momentum <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ema_momentum must lie in (0, 1), got {ema_momentum}"
            )));
        }
        Ok(NormalizerState {
            mu_z: 0.0,
            sigma_z: 0.0,
            mu_cr: 0.0,
            sigma_cr: 0.0,
            ema_momentum,
            initialized: false,
        })
    }

    /// A pre-initialized state with pinned statistics (gradient-field
    /// snapshots, tests). The momentum is irrelevant while frozen.
    pub fn frozen(mu_z: f64, sigma_z: f64, mu_cr: f64, sigma_cr: f64) -> Self {
        NormalizerState {
            mu_z,
            sigma_z,
            mu_cr,
            sigma_cr,
            ema_momentum: 0.99,
            initialized: true,
        }
    }

    /// Folds one batch of feature norms and certainty ratios into the running
    /// statistics. The first call adopts the batch statistics directly;
    /// afterwards `running = momentum * running + (1 - momentum) * batch` for
    /// all four quantities. Batch std uses the population (divide-by-N)
    /// convention.
    pub fn ema_update(&mut self, batch_norms: &[f64], batch_crs: &[f64]) -> Result<()> {
        if batch_norms.is_empty() || batch_crs.is_empty() {
            return Err(Error::EmptyInput("ema_update batch"));
        }
        for (what, xs) in [("feature norm", batch_norms), ("certainty ratio", batch_crs)] {
            if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
                let _ = what;
                return Err(Error::NonFinite {
                    what: "ema_update input",
                    sample: i,
                });
            }
        }
        let (mz, sz) = mean_std_population(batch_norms);
        let (mc, sc) = mean_std_population(batch_crs);
        if self.initialized {
            let a = self.ema_momentum;
            let b = 1.0 - a;
            self.mu_z = a * self.mu_z + b * mz;
            self.sigma_z = a * self.sigma_z + b * sz;
            self.mu_cr = a * self.mu_cr + b * mc;
            self.sigma_cr = a * self.sigma_cr + b * sc;
        } else {
            self.mu_z = mz;
            self.sigma_z = sz;
            self.mu_cr = mc;
            self.sigma_cr = sc;
            self.initialized = true;
        }
        Ok(())
    }

    /// Standardized, clipped feature norm; 0 before the first update.
    pub fn norm_hat(&self, norm: f64, h: f64) -> f64 {
        if !self.initialized {
            return 0.0;
        }
        normalize_clip(norm, self.mu_z, self.sigma_z, h)
    }

    /// Standardized, clipped certainty ratio; 0 before the first update.
    pub fn cr_hat(&self, cr: f64, h: f64) -> f64 {
        if !self.initialized {
            return 0.0;
        }
        normalize_clip(cr, self.mu_cr, self.sigma_cr, h)
    }
}

/// `clamp((value - mu) / (sigma / h), -1, 1)`; 0 when sigma is degenerate.
/// `h` widens the band of values that map into the unclipped region.
pub fn normalize_clip(value: f64, mu: f64, sigma: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    if sigma < SIGMA_GUARD {
        return 0.0;
    }
    ((value - mu) / (sigma / h)).clamp(-1.0, 1.0)
}

/// Certainty ratio with both cosines clipped into [0, 1] and an epsilon
/// guard on the denominator. Range is [0, 1/epsilon].
pub fn certainty_ratio(cos_pos: f64, cos_neg_max: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0);
    cos_pos.clamp(0.0, 1.0) / (cos_neg_max.clamp(0.0, 1.0) + epsilon)
}

/// The original certainty-ratio form, `cos_pos / (cos_neg_max + 1 + eps)`,
/// kept for density analyses and comparisons.
pub fn certainty_ratio_legacy(cos_pos: f64, cos_neg_max: f64, epsilon: f64) -> f64 {
    cos_pos / (cos_neg_max + 1.0 + epsilon)
}

/// Convex mix of the normalized norm and normalized certainty ratio.
/// `lambda = 1` keeps only the norm signal, `lambda = 0` only the ratio.
pub fn mix_kappa(norm_hat: f64, cr_hat: f64, lambda: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&lambda));
    lambda * norm_hat + (1.0 - lambda) * cr_hat
}

/// Mean and population standard deviation, summed in index order.
pub fn mean_std_population(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

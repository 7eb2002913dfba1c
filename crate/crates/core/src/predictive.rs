use nalgebra::DVector;

use crate::error::{GpError, Result};

/// Round-off tolerance below zero for latent variances before clamping.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-8;

/// Per-test-point predictive mean and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMarginals {
    pub mean: DVector<f64>,
    pub latent_var: DVector<f64>,
    /// `latent_var + σ_y²`
    pub observed_var: DVector<f64>,
}

impl PredictiveMarginals {
    /// Clamps latent variances that are negative by round-off only.
    pub(crate) fn from_latent(mean: DVector<f64>, mut latent_var: DVector<f64>, noise_variance: f64) -> Result<Self> {
        for v in latent_var.iter_mut() {
            if *v < -NEGATIVE_VARIANCE_TOL || !v.is_finite() {
                return Err(GpError::Conditioning { matrix: "predictive covariance", jitter: 0.0 });
            }
            *v = v.max(0.0);
        }
        let observed_var = latent_var.add_scalar(noise_variance);
        Ok(Self { mean, latent_var, observed_var })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

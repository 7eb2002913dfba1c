//! Dense exact GP regression.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};
use crate::kernel::{kernel_diag, kernel_matrix, Hyperparams, InputMatrix};
use crate::linalg::{cholesky, col_sq_norms, logdet_chol, solve_lower, solve_lower_tr_vec, solve_lower_vec};
use crate::predictive::PredictiveMarginals;

/// A fitted exact GP: cached Cholesky of `K_ff + σ_y² I` (plus jitter).
#[derive(Debug, Clone)]
pub struct ExactModel {
    x: InputMatrix,
    y: DVector<f64>,
    theta: Hyperparams,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

pub(crate) fn check_targets(x: &InputMatrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(GpError::DimensionMismatch { context: "targets", expected: x.nrows(), found: y.len() });
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(GpError::invalid("targets contain non-finite values"));
    }
    Ok(())
}

impl ExactModel {
    pub fn fit(x: &InputMatrix, y: &[f64], theta: &Hyperparams) -> Result<Self> {
        theta.validate()?;
        if x.is_empty() {
            return Err(GpError::invalid("exact GP needs at least one observation"));
        }
        check_targets(x, y)?;
        let mut a = kernel_matrix(x, x, theta)?;
        let s2 = theta.noise_variance();
        for i in 0..a.nrows() {
            a[(i, i)] += s2;
        }
        let chol = cholesky(&a, theta.diagonal_jitter(), "K_ff + noise")?;
        let y = DVector::from_column_slice(y);
        let alpha = solve_lower_tr_vec(&chol, &solve_lower_vec(&chol, &y));
        Ok(Self { x: x.clone(), y, theta: theta.clone(), chol, alpha })
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    pub fn inputs(&self) -> &InputMatrix {
        &self.x
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `log N(y; 0, K_ff + σ_y² I)`
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        -0.5 * self.y.dot(&self.alpha) - 0.5 * logdet_chol(&self.chol) - 0.5 * n * (2.0 * PI).ln()
    }

    pub fn predict(&self, xs: &InputMatrix) -> Result<PredictiveMarginals> {
        let k_fs = kernel_matrix(&self.x, xs, &self.theta)?;
        let mean = k_fs.transpose() * &self.alpha;
        let v = solve_lower(&self.chol, &k_fs);
        let var = kernel_diag(xs, &self.theta)? - col_sq_norms(&v);
        PredictiveMarginals::from_latent(mean, var, self.theta.noise_variance())
    }

    /// Bytes held by the cached model state.
    pub fn footprint_bytes(&self) -> usize {
        let n = self.y.len();
        8 * (n * self.x.dim() + 2 * n + n * n)
    }
}

/// Convenience: fit and return the log marginal likelihood.
pub fn log_marginal_likelihood(x: &InputMatrix, y: &[f64], theta: &Hyperparams) -> Result<f64> {
    Ok(ExactModel::fit(x, y, theta)?.log_marginal_likelihood())
}

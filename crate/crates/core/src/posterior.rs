//! Streaming sparse posterior state shared by the VFE and Power-EP updates.
//!
//! The posterior `q(a) = N(m_a, S_a)` is kept in natural-parameter form,
//! whitened against the Cholesky factor of the prior it was fit under,
//! `K'_aa = L Lᵀ` (hyperparameters `θ_fit`):
//!
//! ```text
//! S_a⁻¹        = L⁻ᵀ (I + E) L⁻¹
//! S_a⁻¹ m_a    = L⁻ᵀ g
//! S_a⁻¹ - K'⁻¹ = L⁻ᵀ E L⁻¹        (the old-data message precision D_a⁻¹)
//! ```
//!
//! `E` is the whitened message precision and `g` the whitened message
//! shift. The next update only ever needs these products, so `D_a` itself is
//! never formed. The moments `m_a`, `S_a` are cached for callers.

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};
use crate::harness::data::DataBatch;
use crate::kernel::{kernel_diag, kernel_matrix, Hyperparams, InputMatrix};
use crate::linalg::{
    cholesky, col_sq_norms, logdet_chol, solve_lower, solve_lower_tr, solve_lower_tr_vec, solve_lower_vec, symmetrize,
};
use crate::predictive::{PredictiveMarginals, NEGATIVE_VARIANCE_TOL};

#[derive(Debug, Clone)]
pub struct SparsePosterior {
    z: InputMatrix,
    theta_fit: Hyperparams,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// `S_a = R Rᵀ` with `R = L L_D⁻ᵀ`
    cov_factor: DMatrix<f64>,
    prior_chol: DMatrix<f64>,
    msg_precision: DMatrix<f64>,
    msg_shift: DVector<f64>,
    /// Cholesky of `I + E`.
    chol_d: DMatrix<f64>,
    n_seen: usize,
}

impl SparsePosterior {
    /// The initial state: no pseudo-points, no data.
    pub fn empty(dim: usize, theta: &Hyperparams) -> Self {
        Self {
            z: InputMatrix::empty(dim),
            theta_fit: theta.clone(),
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
            cov_factor: DMatrix::zeros(0, 0),
            prior_chol: DMatrix::zeros(0, 0),
            msg_precision: DMatrix::zeros(0, 0),
            msg_shift: DVector::zeros(0),
            chol_d: DMatrix::zeros(0, 0),
            n_seen: 0,
        }
    }

    /// Builds a state from moments `(m_a, S_a)` at `z` fit under `theta_fit`.
    ///
    /// `n_seen` is the number of observations the posterior summarises; it
    /// only feeds the pseudo-input placement heuristic.
    pub fn from_moments(
        z: &InputMatrix,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        theta_fit: &Hyperparams,
        n_seen: usize,
    ) -> Result<Self> {
        theta_fit.validate()?;
        let m = z.nrows();
        if m == 0 {
            return Ok(Self::empty(z.dim(), theta_fit));
        }
        if mean.len() != m || cov.shape() != (m, m) {
            return Err(GpError::DimensionMismatch { context: "posterior moments", expected: m, found: mean.len() });
        }
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-10 * cov.amax().max(1.0) {
            return Err(GpError::invalid("posterior covariance is not symmetric"));
        }
        let k = kernel_matrix(z, z, theta_fit)?;
        let l = cholesky(&k, theta_fit.diagonal_jitter(), "K'_aa")?;
        // S_a is factorised as given; jitter only as a fallback.
        let l_s = cholesky(cov, 0.0, "S_a").or_else(|_| cholesky(cov, theta_fit.diagonal_jitter(), "S_a"))?;
        // Y = L_S⁻¹ L, so Lᵀ S⁻¹ L = Yᵀ Y
        let y = solve_lower(&l_s, &l);
        let mut e = y.transpose() * &y - DMatrix::identity(m, m);
        symmetrize(&mut e);
        let g = y.transpose() * solve_lower_vec(&l_s, mean);
        let chol_d = cholesky(&(DMatrix::identity(m, m) + &e), 0.0, "I + E")?;
        Ok(Self::assemble(z.clone(), theta_fit.clone(), l, e, g, chol_d, n_seen))
    }

    pub(crate) fn assemble(
        z: InputMatrix,
        theta_fit: Hyperparams,
        prior_chol: DMatrix<f64>,
        msg_precision: DMatrix<f64>,
        msg_shift: DVector<f64>,
        chol_d: DMatrix<f64>,
        n_seen: usize,
    ) -> Self {
        let cov_factor = solve_lower(&chol_d, &prior_chol.transpose()).transpose();
        let mut cov = &cov_factor * cov_factor.transpose();
        symmetrize(&mut cov);
        let mean = &prior_chol * solve_lower_tr_vec(&chol_d, &solve_lower_vec(&chol_d, &msg_shift));
        Self { z, theta_fit, mean, cov, cov_factor, prior_chol, msg_precision, msg_shift, chol_d, n_seen }
    }

    pub fn z(&self) -> &InputMatrix {
        &self.z
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn theta_fit(&self) -> &Hyperparams {
        &self.theta_fit
    }

    pub fn num_pseudo(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    /// Natural parameters `(S⁻¹ m, S⁻¹)`.
    pub fn natural_parameters(&self) -> (DVector<f64>, DMatrix<f64>) {
        let l = &self.prior_chol;
        let shift = solve_lower_tr_vec(l, &self.msg_shift);
        let d = &self.chol_d * self.chol_d.transpose();
        let half = solve_lower_tr(l, &d);
        let mut precision = solve_lower_tr(l, &half.transpose());
        symmetrize(&mut precision);
        (shift, precision)
    }

    pub(crate) fn prior_chol(&self) -> &DMatrix<f64> {
        &self.prior_chol
    }

    pub(crate) fn msg_precision(&self) -> &DMatrix<f64> {
        &self.msg_precision
    }

    pub(crate) fn msg_shift(&self) -> &DVector<f64> {
        &self.msg_shift
    }

    pub(crate) fn chol_d(&self) -> &DMatrix<f64> {
        &self.chol_d
    }

    /// Bytes of model state (inputs, moments and cached factors).
    pub fn footprint_bytes(&self) -> usize {
        let m = self.num_pseudo();
        8 * (m * self.z.dim() + 2 * m + 5 * m * m)
    }

    /// Predictive marginals at `xs` under `theta`.
    ///
    /// Uses the stored moments: mean `K_sb K_bb⁻¹ m_b`, latent variance
    /// `k_ss - K_sb K_bb⁻¹ K_bs + K_sb K_bb⁻¹ S_b K_bb⁻¹ K_bs`.
    pub fn predict(&self, xs: &InputMatrix, theta: &Hyperparams) -> Result<PredictiveMarginals> {
        if self.is_empty() {
            return Err(GpError::invalid("cannot predict from an empty posterior"));
        }
        theta.validate()?;
        let l = if *theta == self.theta_fit {
            self.prior_chol.clone()
        } else {
            let k = kernel_matrix(&self.z, &self.z, theta)?;
            cholesky(&k, theta.diagonal_jitter(), "K_bb")?
        };
        let k_bs = kernel_matrix(&self.z, xs, theta)?;
        let v = solve_lower(&l, &k_bs);
        let mean = v.transpose() * solve_lower_vec(&l, &self.mean);
        let w = self.cov_factor.transpose() * solve_lower_tr(&l, &v);
        let var = kernel_diag(xs, theta)? - col_sq_norms(&v) + col_sq_norms(&w);
        PredictiveMarginals::from_latent(mean, var, theta.noise_variance())
    }
}

/// Quantities of the old posterior re-expressed against the new pseudo-points.
pub(crate) struct OldTerms {
    /// `B_a = L_b⁻¹ K_ba L_a⁻ᵀ`
    pub b_a: DMatrix<f64>,
    /// whitened message precision `E_a`
    pub e: DMatrix<f64>,
    /// whitened message shift `g_a`
    pub g: DVector<f64>,
    /// `C = L_a⁻¹ Q_a L_a⁻ᵀ`
    pub q_a_white: DMatrix<f64>,
    /// `log|I + E_a| = log|K'_aa| - log|S_a|`
    pub logdet_d: f64,
    /// `m_aᵀ S_a⁻¹ m_a`
    pub m_eta: f64,
}

/// Quantities of the new batch against the new pseudo-points `b`.
pub(crate) struct StepTerms {
    pub n: usize,
    pub noise: f64,
    pub l_b: DMatrix<f64>,
    /// `A_f = L_b⁻¹ K_bf`
    pub a_f: DMatrix<f64>,
    /// clamped `diag(K_ff - K_fb K_bb⁻¹ K_bf)`
    pub q_f: DVector<f64>,
    pub y: DVector<f64>,
    pub old: Option<OldTerms>,
}

pub(crate) fn step_terms(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
) -> Result<StepTerms> {
    theta.validate()?;
    if batch.is_empty() {
        return Err(GpError::invalid("batch must contain at least one observation"));
    }
    if z_new.is_empty() {
        return Err(GpError::invalid("at least one new pseudo-input is required"));
    }
    if !old.is_empty() && old.z.dim() != z_new.dim() {
        return Err(GpError::DimensionMismatch {
            context: "old pseudo-inputs",
            expected: z_new.dim(),
            found: old.z.dim(),
        });
    }
    let k_bb = kernel_matrix(z_new, z_new, theta)?;
    let l_b = cholesky(&k_bb, theta.diagonal_jitter(), "K_bb")?;
    let k_bf = kernel_matrix(z_new, &batch.x, theta)?;
    let a_f = solve_lower(&l_b, &k_bf);
    let kff = kernel_diag(&batch.x, theta)?;
    let mut q_f = kff - col_sq_norms(&a_f);
    for q in q_f.iter_mut() {
        if *q < -NEGATIVE_VARIANCE_TOL * theta.signal_variance() {
            return Err(GpError::Conditioning { matrix: "diag(Q_f)", jitter: theta.diagonal_jitter() });
        }
        *q = q.max(0.0);
    }

    let old_terms = if old.is_empty() {
        None
    } else {
        let l_a = old.prior_chol();
        let k_ba = kernel_matrix(z_new, &old.z, theta)?;
        let a_a = solve_lower(&l_b, &k_ba);
        let b_a = solve_lower(l_a, &a_a.transpose()).transpose();
        // Q_a = K_aa - A_aᵀ A_a, evaluated under the new hyperparameters.
        let k_aa = kernel_matrix(&old.z, &old.z, theta)?;
        let k_white = solve_lower(l_a, &solve_lower(l_a, &k_aa).transpose());
        let mut q_a_white = k_white - b_a.transpose() * &b_a;
        symmetrize(&mut q_a_white);
        let g = old.msg_shift().clone();
        let m_eta = solve_lower_vec(old.chol_d(), &g).norm_squared();
        Some(OldTerms { b_a, e: old.msg_precision().clone(), g, q_a_white, logdet_d: logdet_chol(old.chol_d()), m_eta })
    };

    Ok(StepTerms {
        n: batch.len(),
        noise: theta.noise_variance(),
        l_b,
        a_f,
        q_f,
        y: DVector::from_column_slice(&batch.y),
        old: old_terms,
    })
}

/// Factorises `D = I + W`; failure means the old message was not a valid
/// Gaussian precision.
pub(crate) fn factor_d(w: &DMatrix<f64>, has_old: bool) -> Result<DMatrix<f64>> {
    let d = DMatrix::identity(w.nrows(), w.ncols()) + w;
    cholesky(&d, 0.0, "D").map_err(|e| {
        if has_old {
            GpError::InvalidMessage(
                "I + L_b⁻¹ K_bf̂ Σ⁻¹ K_f̂b L_b⁻ᵀ is not positive definite; the old posterior is wider than its prior"
                    .into(),
            )
        } else {
            e
        }
    })
}

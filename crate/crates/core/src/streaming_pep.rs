//! Online Power-EP (α-divergence) update.
//!
//! Same natural-parameter machinery as the VFE update, with the noise blocks
//! inflated: `Σ_y = σ_y² I + α diag(Q_f)` and `Σ_a = D_a + α Q_a`.
//!
//! With `Q_a = L_q L_qᵀ` and `M_a = I + α L_qᵀ D_a⁻¹ L_q`,
//! `Σ_a⁻¹ = D_a⁻¹ - α D_a⁻¹ L_q M_a⁻¹ L_qᵀ D_a⁻¹`. In whitened coordinates
//! `L_q` becomes `J = sqrt(L_a⁻¹ Q_a L_a⁻ᵀ)`, taken as a symmetric PSD square
//! root since `Q_a` is frequently rank-deficient.

use std::f64::consts::PI;

use crate::error::{GpError, Result};
use crate::harness::data::DataBatch;
use crate::kernel::{Hyperparams, InputMatrix};
use crate::linalg::{cholesky, logdet_chol, psd_sqrt, solve_lower_vec, symmetrize};
use crate::posterior::{factor_d, step_terms, SparsePosterior};
use crate::predictive::PredictiveMarginals;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PepConfig {
    pub alpha: f64,
}

impl PepConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(GpError::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

fn pep_step(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
    cfg: PepConfig,
    build: bool,
) -> Result<(Option<SparsePosterior>, f64)> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let t = step_terms(old, batch, theta, z_new)?;
    let s2 = t.noise;
    let n = t.n as f64;

    // Σ_y = σ² I + α diag(Q_f)
    let sigma_y = t.q_f.map(|q| s2 + alpha * q);
    let y_scaled = t.y.component_div(&sigma_y);
    let mut a_scaled = t.a_f.clone();
    for (j, mut col) in a_scaled.column_iter_mut().enumerate() {
        col /= sigma_y[j];
    }
    let mut w = &a_scaled * t.a_f.transpose();
    let mut cw = &t.a_f * &y_scaled;

    // log|Σ_y| relative to N log σ², kept separate to avoid cancellation.
    let log1p_sum: f64 = t.q_f.iter().map(|q| (alpha * q / s2).ln_1p()).sum();
    let mut energy =
        -0.5 * t.y.dot(&y_scaled) - 0.5 * n * s2.ln() - 0.5 * log1p_sum / alpha - 0.5 * n * (2.0 * PI).ln();

    if let Some(o) = &t.old {
        let j = psd_sqrt(&o.q_a_white, 1e-8, "Q_a")?;
        let ej = &o.e * &j;
        let mut m_mat = j.transpose() * &ej * alpha;
        for i in 0..m_mat.nrows() {
            m_mat[(i, i)] += 1.0;
        }
        symmetrize(&mut m_mat);
        let l_m = cholesky(&m_mat, 0.0, "M_a")
            .map_err(|_| GpError::InvalidMessage("Σ_a = D_a + α Q_a is not positive definite".into()))?;
        let g_mat = &o.b_a * &ej;
        // G M⁻¹ Gᵀ through the Cholesky of M_a
        let h = l_m.solve_lower_triangular(&g_mat.transpose()).expect("positive diagonal");
        w += &o.b_a * &o.e * o.b_a.transpose() - h.transpose() * &h * alpha;

        let jt_g = j.transpose() * &o.g;
        let r = solve_lower_vec(&l_m, &jt_g);
        cw += &o.b_a * &o.g - h.transpose() * &r * alpha;

        energy += 0.5 * alpha * r.norm_squared() + 0.5 * o.logdet_d - 0.5 * logdet_chol(&l_m) / alpha - 0.5 * o.m_eta;
    }
    symmetrize(&mut w);
    let l_d = factor_d(&w, t.old.is_some())?;
    let u = solve_lower_vec(&l_d, &cw);
    energy += 0.5 * u.norm_squared() - 0.5 * logdet_chol(&l_d);

    let post =
        build.then(|| SparsePosterior::assemble(z_new.clone(), theta.clone(), t.l_b, w, cw, l_d, old.n_seen() + t.n));
    Ok((post, energy))
}

/// Online Power-EP update with fractional parameter `cfg.alpha`.
pub fn pep_update(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
    cfg: PepConfig,
) -> Result<(SparsePosterior, f64)> {
    let (post, energy) = pep_step(old, batch, theta, z_new, cfg, true)?;
    Ok((post.expect("posterior requested"), energy))
}

/// Collapsed Power-EP energy; the optimizer's objective.
pub fn pep_energy(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
    cfg: PepConfig,
) -> Result<f64> {
    Ok(pep_step(old, batch, theta, z_new, cfg, false)?.1)
}

pub fn predict(post: &SparsePosterior, xs: &InputMatrix, theta: &Hyperparams) -> Result<PredictiveMarginals> {
    post.predict(xs, theta)
}

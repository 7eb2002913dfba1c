//! Online variational free-energy update of a sparse GP posterior.
//!
//! Given the previous posterior `q_old(a)` (fit under `θ_old` at `z_old`) and
//! a new batch, the optimal `q_new(b)` has
//!
//! ```text
//! precision     K_bb⁻¹ + K_bb⁻¹ K_bf̂ Σ̂⁻¹ K_f̂b K_bb⁻¹
//! natural mean  K_bb⁻¹ K_bf̂ Σ̂⁻¹ ŷ
//! ```
//!
//! with `ŷ = [y; D_a S_a⁻¹ m_a]` and `Σ̂ = blockdiag(σ_y² I, D_a)`. Only the
//! products `K_bf̂ Σ̂⁻¹ K_f̂b = K_bf K_fb / σ_y² + K_ba D_a⁻¹ K_ab` and
//! `K_bf̂ Σ̂⁻¹ ŷ = K_bf y / σ_y² + K_ba S_a⁻¹ m_a` are needed.

use std::f64::consts::PI;

use crate::error::Result;
use crate::harness::data::DataBatch;
use crate::kernel::{Hyperparams, InputMatrix};
use crate::linalg::{logdet_chol, solve_lower_vec, symmetrize};
use crate::posterior::{factor_d, step_terms, SparsePosterior};
use crate::predictive::PredictiveMarginals;

/// Collapsed online energy and its additive parts.
///
/// `gaussian_term` is the data-fit part in its stable form
/// `-(N/2) log 2πσ² - ½ log|D| - yᵀy/2σ² + ½ cᵀ L_b⁻ᵀ D⁻¹ L_b⁻¹ c`;
/// `delta_a` collects every old-posterior term
/// `½ log|K'_aa| - ½ log|S_a| - ½ tr[D_a⁻¹ Q_a] - ½ m_aᵀ S_a⁻¹ m_a`
/// and is exactly zero for the empty state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub gaussian_term: f64,
    pub trace_term: f64,
    pub delta_a: f64,
}

fn vfe_step(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
    build: bool,
) -> Result<(Option<SparsePosterior>, EnergyBreakdown)> {
    let t = step_terms(old, batch, theta, z_new)?;
    let s2 = t.noise;
    let n = t.n as f64;

    let mut w = &t.a_f * t.a_f.transpose() / s2;
    let mut cw = &t.a_f * &t.y / s2;
    let mut delta_a = 0.0;
    if let Some(o) = &t.old {
        w += &o.b_a * &o.e * o.b_a.transpose();
        cw += &o.b_a * &o.g;
        let trace_dq = o.e.component_mul(&o.q_a_white).sum();
        delta_a = 0.5 * o.logdet_d - 0.5 * trace_dq - 0.5 * o.m_eta;
    }
    symmetrize(&mut w);
    let l_d = factor_d(&w, t.old.is_some())?;
    let u = solve_lower_vec(&l_d, &cw);

    let gaussian_term = -0.5 * n * (2.0 * PI * s2).ln() - 0.5 * logdet_chol(&l_d) - 0.5 * t.y.norm_squared() / s2
        + 0.5 * u.norm_squared();
    let trace_term = -0.5 * t.q_f.sum() / s2;
    let energy = EnergyBreakdown { total: gaussian_term + trace_term + delta_a, gaussian_term, trace_term, delta_a };

    let post =
        build.then(|| SparsePosterior::assemble(z_new.clone(), theta.clone(), t.l_b, w, cw, l_d, old.n_seen() + t.n));
    Ok((post, energy))
}

/// Online VFE update: returns `q_new(b)` at `z_new` under `theta` and the
/// collapsed energy for this batch.
pub fn vfe_update(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
) -> Result<(SparsePosterior, EnergyBreakdown)> {
    let (post, energy) = vfe_step(old, batch, theta, z_new, true)?;
    Ok((post.expect("posterior requested"), energy))
}

/// The collapsed online energy alone; the optimizer's objective.
pub fn vfe_energy(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta: &Hyperparams,
    z_new: &InputMatrix,
) -> Result<EnergyBreakdown> {
    Ok(vfe_step(old, batch, theta, z_new, false)?.1)
}

pub fn predict(post: &SparsePosterior, xs: &InputMatrix, theta: &Hyperparams) -> Result<PredictiveMarginals> {
    post.predict(xs, theta)
}

//! Batch collapsed variational sparse GP.
//!
//! Everything goes through two cascaded Choleskys: `K_uu = L Lᵀ` and the
//! whitened inner matrix `B = I + A Aᵀ` with `A = L⁻¹ K_uf / σ_y`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GpError, Result};
use crate::exact_gp::check_targets;
use crate::kernel::{kernel_diag, kernel_matrix, Hyperparams, InputMatrix};
use crate::linalg::{
    cholesky, col_sq_norms, logdet_chol, solve_lower, solve_lower_tr, solve_lower_tr_vec, solve_lower_vec,
};
use crate::predictive::{PredictiveMarginals, NEGATIVE_VARIANCE_TOL};

struct Factors {
    l_uu: DMatrix<f64>,
    l_inner: DMatrix<f64>,
    c: DVector<f64>,
    bound: f64,
}

fn factorise(x: &InputMatrix, y: &[f64], z: &InputMatrix, theta: &Hyperparams) -> Result<Factors> {
    theta.validate()?;
    if z.is_empty() {
        return Err(GpError::invalid("at least one pseudo-input is required"));
    }
    if x.is_empty() {
        return Err(GpError::invalid("at least one observation is required"));
    }
    check_targets(x, y)?;
    let n = x.nrows();
    let m = z.nrows();
    let s2 = theta.noise_variance();
    let sigma = s2.sqrt();

    let k_uu = kernel_matrix(z, z, theta)?;
    let l_uu = cholesky(&k_uu, theta.diagonal_jitter(), "K_uu")?;
    let k_uf = kernel_matrix(z, x, theta)?;
    let a = solve_lower(&l_uu, &k_uf) / sigma;

    let mut inner = DMatrix::identity(m, m) + &a * a.transpose();
    crate::linalg::symmetrize(&mut inner);
    // B ⪰ I, so no jitter is needed here.
    let l_inner = cholesky(&inner, 0.0, "I + A Aᵀ")?;

    let yv = DVector::from_column_slice(y);
    let c = solve_lower_vec(&l_inner, &(&a * &yv)) / sigma;

    let kff = kernel_diag(x, theta)?;
    let qff = col_sq_norms(&a) * s2;
    let mut trace = 0.0;
    for (k, q) in kff.iter().zip(qff.iter()) {
        let r = k - q;
        if r < -NEGATIVE_VARIANCE_TOL * theta.signal_variance() {
            return Err(GpError::Conditioning { matrix: "diag(Q_f)", jitter: theta.diagonal_jitter() });
        }
        trace += r.max(0.0);
    }

    let bound = -0.5 * n as f64 * (2.0 * PI * s2).ln() - 0.5 * logdet_chol(&l_inner) - 0.5 * yv.norm_squared() / s2
        + 0.5 * c.norm_squared()
        - 0.5 * trace / s2;
    Ok(Factors { l_uu, l_inner, c, bound })
}

/// Collapsed lower bound `F_vfe(θ)` on `log p(y | θ)` for pseudo-inputs `z`.
pub fn collapsed_bound(x: &InputMatrix, y: &[f64], z: &InputMatrix, theta: &Hyperparams) -> Result<f64> {
    Ok(factorise(x, y, z, theta)?.bound)
}

/// Fitted optimal `q(u) = N(q_mean, q_cov)`.
#[derive(Debug, Clone)]
pub struct BatchSgpModel {
    pub z: InputMatrix,
    pub theta: Hyperparams,
    pub q_mean: DVector<f64>,
    pub q_cov: DMatrix<f64>,
    bound: f64,
    l_uu: DMatrix<f64>,
    l_inner: DMatrix<f64>,
    c: DVector<f64>,
}

impl BatchSgpModel {
    pub fn fit(x: &InputMatrix, y: &[f64], z: &InputMatrix, theta: &Hyperparams) -> Result<Self> {
        let f = factorise(x, y, z, theta)?;
        // S = L B⁻¹ Lᵀ, m = L L_B⁻ᵀ c
        let r = solve_lower(&f.l_inner, &f.l_uu.transpose()).transpose();
        let q_cov = &r * r.transpose();
        let q_mean = &f.l_uu * solve_lower_tr_vec(&f.l_inner, &f.c);
        Ok(Self {
            z: z.clone(),
            theta: theta.clone(),
            q_mean,
            q_cov,
            bound: f.bound,
            l_uu: f.l_uu,
            l_inner: f.l_inner,
            c: f.c,
        })
    }

    /// Collapsed bound at the fitted `(θ, Z)`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Natural parameters `(S⁻¹ m, S⁻¹)` of `q(u)`.
    pub fn natural_parameters(&self) -> (DVector<f64>, DMatrix<f64>) {
        // S⁻¹ = L⁻ᵀ B L⁻¹, S⁻¹ m = L⁻ᵀ L_B c
        let b = &self.l_inner * self.l_inner.transpose();
        let linv_t_b = solve_lower_tr(&self.l_uu, &b);
        let precision = solve_lower_tr(&self.l_uu, &linv_t_b.transpose());
        let shift = solve_lower_tr_vec(&self.l_uu, &(&self.l_inner * &self.c));
        (shift, precision)
    }

    pub fn predict(&self, xs: &InputMatrix) -> Result<PredictiveMarginals> {
        let k_us = kernel_matrix(&self.z, xs, &self.theta)?;
        let v = solve_lower(&self.l_uu, &k_us);
        let w = solve_lower(&self.l_inner, &v);
        let mean = w.transpose() * &self.c;
        let var = kernel_diag(xs, &self.theta)? - col_sq_norms(&v) + col_sq_norms(&w);
        PredictiveMarginals::from_latent(mean, var, self.theta.noise_variance())
    }

    pub fn footprint_bytes(&self) -> usize {
        let m = self.z.nrows();
        8 * (m * self.z.dim() + 2 * m + 3 * m * m)
    }
}

/// Deterministic k-means++-style subsample of `m` rows of `x`.
///
/// Returns distinct data rows when `m <= N`; repeated rows otherwise.
pub fn kmeans_subsample(x: &InputMatrix, m: usize, seed: u64) -> Result<InputMatrix> {
    let n = x.nrows();
    if n == 0 || m == 0 {
        return Err(GpError::invalid("k-means subsample needs data and m >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = x.to_rows();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = rows.iter().map(|r| sq(r, &rows[chosen[0]])).collect();
    while chosen.len() < m {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            // every row is already covered; cycle through in order
            chosen.len() % n
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        chosen.push(next);
        for (i, r) in rows.iter().enumerate() {
            dist[i] = dist[i].min(sq(r, &rows[next]));
        }
    }
    Ok(x.select_rows(&chosen))
}

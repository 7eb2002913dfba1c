//! Small dense linear-algebra helpers shared by the GP modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};

/// Lower Cholesky factor of `a + jitter·I`.
pub fn cholesky(a: &DMatrix<f64>, jitter: f64, name: &'static str) -> Result<DMatrix<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    let l = m.cholesky().map(|c| c.unpack()).ok_or(GpError::Conditioning { matrix: name, jitter })?;
    if !l.iter().all(|v| v.is_finite()) {
        return Err(GpError::Conditioning { matrix: name, jitter });
    }
    Ok(l)
}

/// `log|L Lᵀ|` from a lower Cholesky factor.
pub fn logdet_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `L⁻¹ B`
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// `L⁻¹ b`
pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// `L⁻ᵀ B`
pub fn solve_lower_tr(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// `L⁻ᵀ b`
pub fn solve_lower_tr_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// `(L Lᵀ)⁻¹ b`
pub fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_tr_vec(l, &solve_lower_vec(l, b))
}

/// `(L Lᵀ)⁻¹ B`
pub fn chol_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    solve_lower_tr(l, &solve_lower(l, b))
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Column-wise sum of squares, i.e. `diag(Aᵀ A)`.
pub fn col_sq_norms(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm_squared()))
}

/// Symmetric square root `R` with `R Rᵀ = A` for a PSD matrix.
///
/// Eigenvalues down to `-tol·max(1, λ_max)` are treated as round-off and
/// clamped to zero; anything more negative is a conditioning error.
pub fn psd_sqrt(a: &DMatrix<f64>, tol: f64, name: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut root = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol * scale {
            return Err(GpError::Conditioning { matrix: name, jitter: 0.0 });
        }
        let r = lam.max(0.0).sqrt();
        root.column_mut(j).scale_mut(r);
    }
    Ok(root)
}

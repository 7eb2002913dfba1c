//! ARD squared-exponential covariance and the hyperparameter container.
//!
//! `k(x, x') = σ_f² exp(-½ Σ_d (x_d - x'_d)² / ℓ_d²)`

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};

/// Default diagonal jitter, relative to the signal variance.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Kernel and likelihood parameters, stored in unconstrained log form.
///
/// `jitter` is numerical configuration carried alongside the parameters so
/// that every factorisation made under a given set of hyperparameters uses
/// the same stabilisation. It is not part of the optimised vector.
///
/// The jitter is relative: `jitter · σ_f²` is what lands on the diagonal (see
/// [`diagonal_jitter`](Self::diagonal_jitter)). An absolute constant stops
/// regularising once σ_f² grows large, and an optimiser can then climb into
/// regions where every kernel factorisation is round-off.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
    pub jitter: f64,
}

impl Hyperparams {
    /// Builds from positive (constrained) values.
    pub fn new(lengthscales: &[f64], signal_variance: f64, noise_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(GpError::invalid("at least one lengthscale is required"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !lengthscales.iter().all(|&l| positive(l)) || !positive(signal_variance) || !positive(noise_variance) {
            return Err(GpError::invalid("lengthscales and variances must be finite and strictly positive"));
        }
        Ok(Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
            jitter: DEFAULT_JITTER,
        })
    }

    /// Isotropic convenience constructor.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Self::new(&vec![lengthscale; dim], signal_variance, noise_variance)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Absolute amount added to kernel-matrix diagonals before factorising.
    pub fn diagonal_jitter(&self) -> f64 {
        self.jitter * self.signal_variance()
    }

    /// Number of entries in the unconstrained vector (`D + 2`).
    pub fn num_unconstrained(&self) -> usize {
        self.dim() + 2
    }

    /// `[log ℓ_1..log ℓ_D, log σ_f², log σ_y²]`
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_variance);
        v.push(self.log_noise_variance);
        v
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained); keeps the jitter.
    pub fn with_unconstrained(&self, v: &[f64]) -> Result<Self> {
        let d = self.dim();
        if v.len() != d + 2 {
            return Err(GpError::DimensionMismatch {
                context: "unconstrained hyperparameter vector",
                expected: d + 2,
                found: v.len(),
            });
        }
        let out = Self {
            log_lengthscales: v[..d].to_vec(),
            log_signal_variance: v[d],
            log_noise_variance: v[d + 1],
            jitter: self.jitter,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.log_lengthscales.iter().all(|v| v.is_finite())
            && self.log_signal_variance.is_finite()
            && self.log_noise_variance.is_finite();
        // exp() of a finite but huge log value still overflows.
        let positive = self.lengthscales().iter().all(|l| l.is_finite() && *l > 0.0)
            && self.signal_variance().is_finite()
            && self.signal_variance() > 0.0
            && self.noise_variance().is_finite()
            && self.noise_variance() > 0.0;
        if self.dim() == 0 || !finite || !positive {
            return Err(GpError::invalid("hyperparameters must be finite with D >= 1"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(GpError::invalid("jitter must be finite and non-negative"));
        }
        Ok(())
    }
}

/// An `N × D` block of inputs. `N` may be zero; `D` is at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix(DMatrix<f64>);

impl InputMatrix {
    /// Builds from row-major values.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(GpError::invalid("input dimension must be at least 1"));
        }
        if values.len() != rows * cols {
            return Err(GpError::DimensionMismatch {
                context: "input matrix values",
                expected: rows * cols,
                found: values.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, &values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GpError::invalid("ragged input rows"));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values)
    }

    /// Single-column inputs.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(GpError::invalid("input dimension must be at least 1"));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GpError::invalid("input matrix contains non-finite values"));
        }
        Ok(Self(m))
    }

    pub fn empty(dim: usize) -> Self {
        Self(DMatrix::zeros(0, dim.max(1)))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|d| self.0[(i, d)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.nrows()).map(|i| self.row(i)).collect()
    }

    /// Row-major flattening, the layout used for pseudo-inputs in the optimizer.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.to_rows().concat()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self(self.0.select_rows(idx))
    }

    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(GpError::DimensionMismatch { context: "vstack", expected: self.dim(), found: other.dim() });
        }
        let (n1, n2, d) = (self.nrows(), other.nrows(), self.dim());
        let m = DMatrix::from_fn(n1 + n2, d, |i, j| if i < n1 { self.0[(i, j)] } else { other.0[(i - n1, j)] });
        Ok(Self(m))
    }

    /// Rows scaled by `1/ℓ_d`, flattened row-major.
    fn scaled_rows(&self, inv_ls: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.nrows() * d);
        for i in 0..self.nrows() {
            for (j, s) in inv_ls.iter().enumerate().take(d) {
                out.push(self.0[(i, j)] * s);
            }
        }
        out
    }
}

fn check_dim(x: &InputMatrix, theta: &Hyperparams) -> Result<()> {
    if x.dim() != theta.dim() {
        return Err(GpError::DimensionMismatch {
            context: "kernel input dimension",
            expected: theta.dim(),
            found: x.dim(),
        });
    }
    Ok(())
}

/// Gram block `K_{X1 X2}`.
pub fn kernel_matrix(x1: &InputMatrix, x2: &InputMatrix, theta: &Hyperparams) -> Result<DMatrix<f64>> {
    check_dim(x1, theta)?;
    check_dim(x2, theta)?;
    let d = theta.dim();
    let inv_ls: Vec<f64> = theta.lengthscales().iter().map(|l| 1.0 / l).collect();
    let a = x1.scaled_rows(&inv_ls);
    let b = x2.scaled_rows(&inv_ls);
    let sf2 = theta.signal_variance();
    let (n1, n2) = (x1.nrows(), x2.nrows());
    let mut k = DMatrix::zeros(n1, n2);
    for j in 0..n2 {
        let bj = &b[j * d..(j + 1) * d];
        for i in 0..n1 {
            let ai = &a[i * d..(i + 1) * d];
            let r2: f64 = ai.iter().zip(bj).map(|(p, q)| (p - q) * (p - q)).sum();
            k[(i, j)] = sf2 * (-0.5 * r2).exp();
        }
    }
    Ok(k)
}

/// Diagonal of `K_{XX}`; every entry is `σ_f²` for this stationary kernel.
pub fn kernel_diag(x: &InputMatrix, theta: &Hyperparams) -> Result<DVector<f64>> {
    check_dim(x, theta)?;
    Ok(DVector::from_element(x.nrows(), theta.signal_variance()))
}

//! Synthetic streams drawn from a GP prior with known hyperparameters.

use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GpError, Result};
use crate::kernel::{kernel_matrix, Hyperparams, InputMatrix};
use crate::linalg::cholesky;

/// Largest sample size drawn densely.
pub const MAX_SYNTH_POINTS: usize = 5000;

/// Inputs live on `[0, SYNTH_RANGE]` along every axis.
pub const SYNTH_RANGE: f64 = 10.0;

/// Draws `n` inputs and `y ~ N(0, K_ff + σ_y² I)`.
///
/// One-dimensional inputs are sorted uniform draws (a time series); higher
/// dimensions use a regular grid, truncated to `n` points in row order.
pub fn synth_gp_stream(dim: usize, n: usize, theta: &Hyperparams, seed: u64) -> Result<(InputMatrix, Vec<f64>)> {
    theta.validate()?;
    if dim != theta.dim() {
        return Err(GpError::DimensionMismatch {
            context: "synthetic input dimension",
            expected: theta.dim(),
            found: dim,
        });
    }
    if n == 0 || n > MAX_SYNTH_POINTS {
        return Err(GpError::invalid(format!("synthetic size must be in 1..={MAX_SYNTH_POINTS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = if dim == 1 {
        let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * SYNTH_RANGE).collect();
        t.sort_by(f64::total_cmp);
        InputMatrix::from_column(&t)?
    } else {
        let side = (n as f64).powf(1.0 / dim as f64).ceil().max(2.0) as usize;
        let step = SYNTH_RANGE / (side - 1) as f64;
        let mut values = Vec::with_capacity(n * dim);
        for k in 0..n {
            let mut rem = k;
            let mut row = vec![0.0; dim];
            for d in (0..dim).rev() {
                row[d] = (rem % side) as f64 * step;
                rem /= side;
            }
            values.extend(row);
        }
        InputMatrix::new(n, dim, values)?
    };

    let mut k = kernel_matrix(&x, &x, theta)?;
    let s2 = theta.noise_variance();
    for i in 0..n {
        k[(i, i)] += s2;
    }
    let l = cholesky(&k, theta.diagonal_jitter(), "synthetic K_ff + noise")?;
    let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (l * eps).as_slice().to_vec();
    Ok((x, y))
}

/// A synthetic stream description, written `dim=1,n=1000,lengthscale=0.8,...`.
///
/// Keys: `dim`, `n`, `lengthscale`, `signal_var`, `noise_var`, `seed`; any
/// omitted key keeps its default.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub n: usize,
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { dim: 1, n: 1000, lengthscale: 0.8, signal_var: 1.0, noise_var: 0.1, seed: 0 }
    }
}

impl SynthSpec {
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        Hyperparams::isotropic(self.dim, self.lengthscale, self.signal_var, self.noise_var)
    }

    pub fn generate(&self) -> Result<(InputMatrix, Vec<f64>)> {
        synth_gp_stream(self.dim, self.n, &self.hyperparams()?, self.seed)
    }
}

impl FromStr for SynthSpec {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| GpError::invalid(format!("synthetic spec entry `{part}` is not key=value")))?;
            let bad = || GpError::invalid(format!("bad value `{value}` for `{key}`"));
            match key.trim() {
                "dim" => spec.dim = value.parse().map_err(|_| bad())?,
                "n" => spec.n = value.parse().map_err(|_| bad())?,
                "lengthscale" => spec.lengthscale = value.parse().map_err(|_| bad())?,
                "signal_var" => spec.signal_var = value.parse().map_err(|_| bad())?,
                "noise_var" => spec.noise_var = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                other => return Err(GpError::invalid(format!("unknown synthetic spec key `{other}`"))),
            }
        }
        Ok(spec)
    }
}

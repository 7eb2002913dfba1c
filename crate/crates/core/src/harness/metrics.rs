use std::f64::consts::PI;

use crate::error::{GpError, Result};
use crate::predictive::PredictiveMarginals;

/// `(mll, rmse)`: mean log density of each `y_true[i]` under
/// `N(mean[i], observed_var[i])`, and the root mean squared error of the means.
pub fn metrics(pred: &PredictiveMarginals, y_true: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != y_true.len() {
        return Err(GpError::DimensionMismatch {
            context: "metrics targets",
            expected: pred.len(),
            found: y_true.len(),
        });
    }
    if y_true.is_empty() {
        return Err(GpError::invalid("metrics need at least one test point"));
    }
    let mut lp = 0.0;
    let mut se = 0.0;
    for ((m, v), y) in pred.mean.iter().zip(pred.observed_var.iter()).zip(y_true) {
        if !(*v > 0.0) {
            return Err(GpError::invalid(format!("non-positive predictive variance {v}")));
        }
        let r = y - m;
        lp += -0.5 * (2.0 * PI * v).ln() - 0.5 * r * r / v;
        se += r * r;
    }
    let n = y_true.len() as f64;
    Ok((lp / n, (se / n).sqrt()))
}

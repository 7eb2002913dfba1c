//! Fixed-θ, fixed-Z consistency checks between the streaming updates and
//! their batch counterparts, used by `streamgp eval-equivalence`.

use nalgebra::{DMatrix, DVector};

use crate::batch_sgp::{collapsed_bound, BatchSgpModel};
use crate::error::Result;
use crate::exact_gp::ExactModel;
use crate::harness::data::DataBatch;
use crate::harness::synth::{synth_gp_stream, SYNTH_RANGE};
use crate::kernel::{Hyperparams, InputMatrix};
use crate::posterior::SparsePosterior;
use crate::streaming_pep::{pep_update, PepConfig};
use crate::streaming_vfe::vfe_update;

/// Jitter small enough that the equivalences hold to ~1e-6.
pub const EQUIVALENCE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// `count` evenly spaced pseudo-inputs on `[0, SYNTH_RANGE]` (1-D).
pub fn spaced_pseudo_inputs(count: usize) -> Result<InputMatrix> {
    let step = SYNTH_RANGE / count as f64;
    InputMatrix::from_column(&(0..count).map(|i| (i as f64 + 0.5) * step).collect::<Vec<_>>())
}

/// Splits `data` into `k` contiguous, nearly equal batches.
pub fn split_batches(data: &DataBatch, k: usize) -> Vec<DataBatch> {
    let n = data.len();
    (0..k).map(|i| data.slice(i * n / k, (i + 1) * n / k)).collect()
}

fn one_d_stream(n: usize, seed: u64) -> Result<(DataBatch, Hyperparams)> {
    let theta = Hyperparams::new(&[0.8], 1.0, 0.1)?.with_jitter(EQUIVALENCE_JITTER);
    let (x, y) = synth_gp_stream(1, n, &theta, seed)?;
    Ok((DataBatch::new(x, y)?, theta))
}

fn stream_vfe(batches: &[DataBatch], theta: &Hyperparams, z: &InputMatrix) -> Result<(SparsePosterior, f64)> {
    let mut post = SparsePosterior::empty(z.dim(), theta);
    let mut total = 0.0;
    for b in batches {
        let (p, e) = vfe_update(&post, b, theta, z)?;
        post = p;
        total += e.total;
    }
    Ok((post, total))
}

/// Streaming VFE over several batches against the batch collapsed bound.
pub fn batch_equivalence(seed: u64) -> Result<Vec<CheckResult>> {
    let (data, theta) = one_d_stream(200, seed)?;
    let z = spaced_pseudo_inputs(10)?;
    let (post, total) = stream_vfe(&split_batches(&data, 4), &theta, &z)?;
    let batch = BatchSgpModel::fit(&data.x, &data.y, &z, &theta)?;
    let xs = InputMatrix::from_column(&(0..50).map(|i| -1.0 + 0.24 * i as f64).collect::<Vec<_>>())?;
    let p = post.predict(&xs, &theta)?;
    let q = batch.predict(&xs)?;
    Ok(vec![
        CheckResult {
            name: "vfe stream vs batch sgp: predictive".into(),
            max_error: max_abs(&p.mean, &q.mean).max(max_abs(&p.latent_var, &q.latent_var)),
            tolerance: 1e-6,
        },
        CheckResult {
            name: "vfe stream vs batch sgp: cumulative energy".into(),
            max_error: (total - collapsed_bound(&data.x, &data.y, &z, &theta)?).abs(),
            tolerance: 1e-6,
        },
    ])
}

/// Pseudo-inputs at every input seen so far recovers the exact GP.
pub fn exact_recovery(seed: u64) -> Result<Vec<CheckResult>> {
    let theta = Hyperparams::isotropic(2, 0.8, 1.0, 0.1)?.with_jitter(EQUIVALENCE_JITTER);
    let (x, y) = synth_gp_stream(2, 120, &theta, seed)?;
    let data = DataBatch::new(x, y)?;
    let mut post = SparsePosterior::empty(2, &theta);
    let mut total = 0.0;
    let mut seen: Option<InputMatrix> = None;
    for b in split_batches(&data, 3) {
        let z = match &seen {
            Some(s) => s.vstack(&b.x)?,
            None => b.x.clone(),
        };
        let (p, e) = vfe_update(&post, &b, &theta, &z)?;
        post = p;
        total += e.total;
        seen = Some(z);
    }
    let exact = ExactModel::fit(&data.x, &data.y, &theta)?;
    let xs = InputMatrix::from_rows(&(0..25).map(|i| vec![0.45 * i as f64, 9.0 - 0.3 * i as f64]).collect::<Vec<_>>())?;
    let p = post.predict(&xs, &theta)?;
    let q = exact.predict(&xs)?;
    Ok(vec![
        CheckResult {
            name: "pseudo-inputs at data vs exact gp: predictive".into(),
            max_error: max_abs(&p.mean, &q.mean).max(max_abs(&p.latent_var, &q.latent_var)),
            tolerance: 1e-6,
        },
        CheckResult {
            name: "pseudo-inputs at data vs exact gp: cumulative energy".into(),
            max_error: (total - exact.log_marginal_likelihood()).abs(),
            tolerance: 1e-6,
        },
    ])
}

/// Power-EP at tiny α against VFE, on a two-batch stream.
pub fn alpha_limit(seed: u64) -> Result<Vec<CheckResult>> {
    let (data, theta) = one_d_stream(60, seed)?;
    let z = spaced_pseudo_inputs(8)?;
    let z2 = spaced_pseudo_inputs(9)?;
    let parts = split_batches(&data, 2);
    let cfg = PepConfig::new(1e-6)?;
    let empty = SparsePosterior::empty(1, &theta);
    let (v1, _) = vfe_update(&empty, &parts[0], &theta, &z)?;
    let (p1, _) = pep_update(&empty, &parts[0], &theta, &z, cfg)?;
    let (v2, ev) = vfe_update(&v1, &parts[1], &theta, &z2)?;
    let (p2, ep) = pep_update(&p1, &parts[1], &theta, &z2, cfg)?;
    let (vs, vp) = v2.natural_parameters();
    let (ps, pp) = p2.natural_parameters();
    let nat_err = rel(&pp, &vp).max((ps - &vs).amax() / vs.amax().max(1e-300));
    Ok(vec![
        CheckResult {
            name: "power-ep alpha=1e-6 vs vfe: natural parameters (relative)".into(),
            max_error: nat_err,
            tolerance: 1e-4,
        },
        CheckResult {
            name: "power-ep alpha=1e-6 vs vfe: energy (relative)".into(),
            max_error: ((ep - ev.total) / ev.total.abs()).abs(),
            tolerance: 1e-4,
        },
    ])
}

/// Two-batch Power-EP equals the one-shot update on the union.
pub fn pep_single_pass(seed: u64) -> Result<Vec<CheckResult>> {
    let (data, theta) = one_d_stream(120, seed)?;
    let z = spaced_pseudo_inputs(10)?;
    let parts = split_batches(&data, 2);
    let empty = SparsePosterior::empty(1, &theta);
    let mut out = Vec::new();
    for alpha in [0.5, 1.0] {
        let cfg = PepConfig::new(alpha)?;
        let (p1, _) = pep_update(&empty, &parts[0], &theta, &z, cfg)?;
        let (p2, _) = pep_update(&p1, &parts[1], &theta, &z, cfg)?;
        let (one, _) = pep_update(&empty, &data, &theta, &z, cfg)?;
        out.push(CheckResult {
            name: format!("power-ep alpha={alpha}: two batches vs one shot"),
            max_error: max_abs(p2.mean(), one.mean()).max((p2.cov() - one.cov()).amax()),
            tolerance: 1e-6,
        });
    }
    Ok(out)
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = batch_equivalence(seed)?;
    out.extend(exact_recovery(seed)?);
    out.extend(alpha_limit(seed)?);
    out.extend(pep_single_pass(seed)?);
    Ok(out)
}

//! Per-batch ascent on the online energy over hyperparameters and
//! pseudo-inputs.
//!
//! Gradients are central finite differences on the unconstrained vector
//! `[log-hypers; Z row-major]`; steps come from L-BFGS with a halving
//! backtracking search, so the returned energy is never below the start.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GpError, Result};
use crate::harness::data::DataBatch;
use crate::kernel::{Hyperparams, InputMatrix};
use crate::posterior::SparsePosterior;
use crate::streaming_pep::{pep_energy, PepConfig};
use crate::streaming_vfe::vfe_energy;

const MAX_HALVINGS: usize = 20;
const LBFGS_MEMORY: usize = 8;
/// Largest move of any single unconstrained coordinate in one step.
const MAX_STEP: f64 = 1.0;
/// Consecutive small-gain iterations that count as converged.
const PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub max_iters: usize,
    pub grad_step: f64,
    /// Stop once the relative energy gain per iteration stays below this for
    /// a few consecutive iterations.
    pub convergence_tol: f64,
    pub optimize_pseudo: bool,
    pub optimize_hypers: bool,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            grad_step: 1e-5,
            convergence_tol: 1e-6,
            optimize_pseudo: true,
            optimize_hypers: true,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_step > 0.0 && self.grad_step.is_finite()) {
            return Err(GpError::invalid("grad_step must be positive"));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(GpError::invalid("convergence_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Vfe,
    Pep(PepConfig),
}

impl Objective {
    pub fn energy(
        &self,
        old: &SparsePosterior,
        batch: &DataBatch,
        theta: &Hyperparams,
        z: &InputMatrix,
    ) -> Result<f64> {
        match self {
            Objective::Vfe => Ok(vfe_energy(old, batch, theta, z)?.total),
            Objective::Pep(cfg) => pep_energy(old, batch, theta, z, *cfg),
        }
    }
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
}

/// Central-difference gradient over the free coordinates. A side whose
/// evaluation fails falls back to a one-sided difference; if both fail the
/// component is zero.
pub fn fd_gradient<F>(f: &F, x: &[f64], fx: f64, free: &[bool], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        if !free[i] {
            continue;
        }
        probe[i] = x[i] + h;
        let up = f(&probe).ok().filter(|v| v.is_finite());
        probe[i] = x[i] - h;
        let down = f(&probe).ok().filter(|v| v.is_finite());
        probe[i] = x[i];
        g[i] = match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            (Some(u), None) => (u - fx) / h,
            (None, Some(d)) => (fx - d) / h,
            (None, None) => 0.0,
        };
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// L-BFGS two-loop recursion for an ascent direction.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    // Works on the negated problem: s = Δx, y = -Δg.
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Maximises `f` over the coordinates flagged in `free`, starting at `x0`.
///
/// An error at the starting point is returned; an error at a trial point
/// only rejects that step.
pub fn maximize<F>(f: F, x0: &[f64], free: &[bool], cfg: &OptimConfig) -> Result<Maximum>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    if free.len() != x0.len() {
        return Err(GpError::DimensionMismatch { context: "optimizer mask", expected: x0.len(), found: free.len() });
    }
    let f0 = f(x0)?;
    if !f0.is_finite() {
        return Err(GpError::invalid("objective is not finite at the starting point"));
    }
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut iterations = 0;
    if cfg.max_iters == 0 || !free.iter().any(|&b| b) {
        return Ok(Maximum { x, value: fx, initial_value: f0, iterations });
    }

    let mut g = fd_gradient(&f, &x, fx, free, cfg.grad_step);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut stalled = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        if g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        let mut accepted = None;
        // Try the quasi-Newton direction first, then plain gradient ascent.
        let had_memory = !memory.is_empty();
        for use_memory in [true, false] {
            if !use_memory && !had_memory {
                break;
            }
            let mut d = if use_memory { lbfgs_direction(&g, &memory) } else { g.clone() };
            let mut slope = dot(&g, &d);
            if !(slope > 0.0) {
                d = g.clone();
                slope = dot(&g, &d);
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut t = if memory.is_empty() || !use_memory { MAX_STEP / dmax } else { 1.0f64.min(MAX_STEP / dmax) };
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
                if let Ok(ft) = f(&trial) {
                    if ft.is_finite() && ft >= fx + 1e-4 * t * slope {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            memory.clear();
        }
        let Some((x_new, f_new)) = accepted else { break };
        let g_new = fd_gradient(&f, &x_new, f_new, free, cfg.grad_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            memory.push_back((s, y));
            if memory.len() > LBFGS_MEMORY {
                memory.pop_front();
            }
        }
        let gain = f_new - fx;
        log::trace!("iteration {iterations}: value {f_new:.8} gain {gain:.3e}");
        x = x_new;
        fx = f_new;
        g = g_new;
        if gain <= cfg.convergence_tol * fx.abs().max(1.0) {
            stalled += 1;
            if stalled >= PATIENCE {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok(Maximum { x, value: fx, initial_value: f0, iterations })
}

fn pack(theta: &Hyperparams, z: &InputMatrix) -> Vec<f64> {
    let mut v = theta.to_unconstrained();
    v.extend(z.to_row_major());
    v
}

fn unpack(v: &[f64], theta: &Hyperparams, rows: usize, dim: usize) -> Result<(Hyperparams, InputMatrix)> {
    let k = theta.num_unconstrained();
    let t = theta.with_unconstrained(&v[..k])?;
    let z = InputMatrix::new(rows, dim, v[k..].to_vec())?;
    Ok((t, z))
}

/// Maximises the online energy of `batch` given `old` over `(θ, Z)`.
///
/// Returns the best parameters and their energy; never worse than the
/// starting point.
pub fn optimize_batch(
    old: &SparsePosterior,
    batch: &DataBatch,
    theta_init: &Hyperparams,
    z_init: &InputMatrix,
    objective: Objective,
    cfg: &OptimConfig,
) -> Result<(Hyperparams, InputMatrix, f64)> {
    let k = theta_init.num_unconstrained();
    let (rows, dim) = (z_init.nrows(), z_init.dim());
    let x0 = pack(theta_init, z_init);
    let free: Vec<bool> =
        (0..x0.len()).map(|i| if i < k { cfg.optimize_hypers } else { cfg.optimize_pseudo }).collect();
    let f = |v: &[f64]| {
        let (t, z) = unpack(v, theta_init, rows, dim)?;
        objective.energy(old, batch, &t, &z)
    };
    let best = maximize(f, &x0, &free, cfg)?;
    if best.iterations == 0 {
        return Ok((theta_init.clone(), z_init.clone(), best.value));
    }
    let (t, z) = unpack(&best.x, theta_init, rows, dim)?;
    log::debug!(
        "batch optimisation: {} iterations, energy {:.6} -> {:.6}",
        best.iterations,
        best.initial_value,
        best.value
    );
    Ok((t, z, best.value))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `count` batch rows at evenly spaced positions with a seeded offset.
fn spaced_rows(batch: &DataBatch, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = batch.len();
    let u: f64 = rng.random();
    (0..count)
        .map(|j| {
            let idx = (((j as f64 + u) * n as f64 / count as f64).floor() as usize).min(n - 1);
            batch.x.row(idx)
        })
        .collect()
}

/// Initial pseudo-inputs for the next batch.
///
/// Keeps the old pseudo-inputs, drops the `⌈M_b·n_b / (n_b + n_seen)⌉` most
/// crowded ones (smallest nearest-neighbour distance, greedily), and fills up
/// to `m_b` with evenly spaced rows of the batch. When there are not enough
/// distinct candidates the remainder are jittered copies of existing rows.
pub fn init_pseudo_inputs(old: &SparsePosterior, batch: &DataBatch, m_b: usize, seed: u64) -> Result<InputMatrix> {
    if m_b == 0 {
        return Err(GpError::invalid("at least one pseudo-input is required"));
    }
    if batch.is_empty() {
        return Err(GpError::invalid("cannot place pseudo-inputs from an empty batch"));
    }
    let dim = batch.x.dim();
    if !old.is_empty() && old.z().dim() != dim {
        return Err(GpError::DimensionMismatch { context: "old pseudo-inputs", expected: dim, found: old.z().dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_b = batch.len();

    let mut kept = old.z().to_rows();
    let n_new = if kept.is_empty() {
        m_b
    } else {
        let frac = (m_b * n_b) as f64 / (n_b + old.n_seen()) as f64;
        let replace = (frac.ceil() as usize).min(m_b);
        let keep = m_b - replace;
        while kept.len() > keep {
            // nearest-neighbour distance of each kept point
            let victim = (0..kept.len())
                .map(|i| {
                    let nn = (0..kept.len())
                        .filter(|&j| j != i)
                        .map(|j| sq_dist(&kept[i], &kept[j]))
                        .fold(f64::INFINITY, f64::min);
                    (i, nn)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            kept.remove(victim);
        }
        m_b - kept.len()
    };

    let from_batch = n_new.min(n_b);
    let mut rows = kept;
    rows.extend(spaced_rows(batch, from_batch, &mut rng));
    if rows.len() < m_b {
        log::warn!("only {} candidate pseudo-inputs for {} requested; adding jittered duplicates", rows.len(), m_b);
        let base = rows.clone();
        let scale: Vec<f64> = (0..dim)
            .map(|d| {
                let col = batch.x.as_matrix().column(d);
                1e-3 * (col.max() - col.min()).max(1.0)
            })
            .collect();
        let mut k = 0;
        while rows.len() < m_b {
            let mut r = base[k % base.len()].clone();
            for (v, s) in r.iter_mut().zip(&scale) {
                *v += s * rng.sample::<f64, _>(StandardNormal);
            }
            rows.push(r);
            k += 1;
        }
    }
    InputMatrix::from_rows(&rows)
}

//! Replays a training set as an ordered stream of batches and records test
//! metrics after every batch.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch_sgp::{collapsed_bound, kmeans_subsample, BatchSgpModel};
use crate::error::{GpError, Result};
use crate::exact_gp::ExactModel;
use crate::harness::data::DataBatch;
use crate::harness::metrics::metrics;
use crate::kernel::{Hyperparams, InputMatrix};
use crate::optimizer::{init_pseudo_inputs, maximize, optimize_batch, Objective, OptimConfig};
use crate::posterior::SparsePosterior;
use crate::predictive::PredictiveMarginals;
use crate::streaming_pep::{pep_update, PepConfig};
use crate::streaming_vfe::vfe_update;

pub const CSV_HEADER: [&str; 6] = ["iteration", "cumulative_seconds", "mll", "rmse", "energy", "peak_bytes"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    SsgpVfe,
    SsgpPep(PepConfig),
    GpWindow,
    SgpWindow,
}

impl Method {
    /// Parses a CLI method name; `alpha` is only used by `ssgp-pep`.
    pub fn parse(name: &str, alpha: f64) -> Result<Self> {
        match name {
            "ssgp-vfe" => Ok(Method::SsgpVfe),
            "ssgp-pep" => Ok(Method::SsgpPep(PepConfig::new(alpha)?)),
            "gp-window" => Ok(Method::GpWindow),
            "sgp-window" => Ok(Method::SgpWindow),
            other => Err(GpError::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    AsGiven,
    Random(u64),
}

impl FromStr for Order {
    type Err = GpError;

    /// `as-given` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "as-given" {
            return Ok(Order::AsGiven);
        }
        s.strip_prefix("random:")
            .and_then(|v| v.parse().ok())
            .map(Order::Random)
            .ok_or_else(|| GpError::invalid(format!("bad order `{s}`; expected as-given or random:<seed>")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamPlan {
    pub batch_size: usize,
    /// Size of the first batch; 0 means the first batch is `batch_size` long.
    pub initial_train: usize,
    pub order: Order,
    /// Observations kept by the windowed baselines.
    pub window_size: usize,
}

impl StreamPlan {
    pub fn validate(&self, method: Method) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GpError::invalid("batch size must be at least 1"));
        }
        if matches!(method, Method::GpWindow | Method::SgpWindow) && self.window_size < self.batch_size {
            return Err(GpError::invalid("window must be at least the batch size"));
        }
        Ok(())
    }

    /// Index ranges of the batches over a training set of `n` rows (after ordering).
    pub fn batches(&self, n: usize) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        if self.initial_train > 0 && n > 0 {
            let end = self.initial_train.min(n);
            out.push(0..end);
            start = end;
        }
        while start < n {
            let end = (start + self.batch_size).min(n);
            out.push(start..end);
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta_init: Hyperparams,
    pub num_pseudo: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cumulative_seconds: f64,
    pub mll: f64,
    pub rmse: f64,
    pub energy: f64,
    pub peak_bytes: usize,
}

impl IterationRecord {
    fn to_row(self) -> [String; 6] {
        [
            self.iteration.to_string(),
            format!("{:.6}", self.cumulative_seconds),
            self.mll.to_string(),
            self.rmse.to_string(),
            self.energy.to_string(),
            self.peak_bytes.to_string(),
        ]
    }
}

/// Per-batch records plus the hyperparameters in force after the last batch.
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub records: Vec<IterationRecord>,
    pub final_theta: Hyperparams,
}

/// What one step of a method produced.
struct Step {
    pred: PredictiveMarginals,
    energy: f64,
    bytes: usize,
}

struct Streamer<'a> {
    method: Method,
    params: &'a ModelParams,
    plan: &'a StreamPlan,
    theta: Hyperparams,
    post: SparsePosterior,
    fixed_z: Option<InputMatrix>,
    window: Option<DataBatch>,
}

impl Streamer<'_> {
    fn step(&mut self, k: usize, batch: &DataBatch, test: &InputMatrix) -> Result<Step> {
        match self.method {
            Method::SsgpVfe | Method::SsgpPep(_) => self.ssgp_step(k, batch, test),
            Method::GpWindow => self.gp_window_step(batch, test),
            Method::SgpWindow => self.sgp_window_step(k, batch, test),
        }
    }

    /// Pseudo-inputs for this step: `place()` unless they were frozen after
    /// the first batch.
    fn pseudo_init(&mut self, place: impl FnOnce(&Self) -> Result<InputMatrix>) -> Result<InputMatrix> {
        if let Some(z) = &self.fixed_z {
            return Ok(z.clone());
        }
        let z = place(self)?;
        if !self.params.optim.optimize_pseudo {
            self.fixed_z = Some(z.clone());
        }
        Ok(z)
    }

    fn ssgp_step(&mut self, k: usize, batch: &DataBatch, test: &InputMatrix) -> Result<Step> {
        let seed = self.params.seed.wrapping_add(k as u64);
        let m = self.params.num_pseudo;
        let z0 = self.pseudo_init(|s| init_pseudo_inputs(&s.post, batch, m, seed))?;
        let objective = match self.method {
            Method::SsgpPep(cfg) => Objective::Pep(cfg),
            _ => Objective::Vfe,
        };
        let (theta, z, _) = optimize_batch(&self.post, batch, &self.theta, &z0, objective, &self.params.optim)?;
        let (post, energy) = match objective {
            Objective::Vfe => {
                let (p, e) = vfe_update(&self.post, batch, &theta, &z)?;
                (p, e.total)
            }
            Objective::Pep(cfg) => pep_update(&self.post, batch, &theta, &z, cfg)?,
        };
        let pred = post.predict(test, &theta)?;
        // state plus the per-batch workspace (batch data and the M_b × N cross-covariance)
        let n = batch.len();
        let bytes = post.footprint_bytes() + self.post.footprint_bytes() + 8 * n * (batch.x.dim() + 1 + z.nrows());
        self.post = post;
        self.theta = theta;
        Ok(Step { pred, energy, bytes })
    }

    fn push_window(&mut self, batch: &DataBatch) -> Result<DataBatch> {
        let joined = match &self.window {
            Some(w) => w.concat(batch)?,
            None => batch.clone(),
        };
        let n = joined.len();
        let keep = self.plan.window_size.min(n);
        let w = joined.slice(n - keep, n);
        self.window = Some(w.clone());
        Ok(w)
    }

    fn gp_window_step(&mut self, batch: &DataBatch, test: &InputMatrix) -> Result<Step> {
        let w = self.push_window(batch)?;
        let x0 = self.theta.to_unconstrained();
        let free = vec![self.params.optim.optimize_hypers; x0.len()];
        let base = self.theta.clone();
        let best = maximize(
            |v| Ok(ExactModel::fit(&w.x, &w.y, &base.with_unconstrained(v)?)?.log_marginal_likelihood()),
            &x0,
            &free,
            &self.params.optim,
        )?;
        self.theta = base.with_unconstrained(&best.x)?;
        let model = ExactModel::fit(&w.x, &w.y, &self.theta)?;
        Ok(Step { pred: model.predict(test)?, energy: model.log_marginal_likelihood(), bytes: model.footprint_bytes() })
    }

    fn sgp_window_step(&mut self, k: usize, batch: &DataBatch, test: &InputMatrix) -> Result<Step> {
        let w = self.push_window(batch)?;
        let seed = self.params.seed.wrapping_add(k as u64);
        let m = self.params.num_pseudo;
        let z0 = self.pseudo_init(|_| kmeans_subsample(&w.x, m, seed))?;
        let kk = self.theta.num_unconstrained();
        let (rows, dim) = (z0.nrows(), z0.dim());
        let mut x0 = self.theta.to_unconstrained();
        x0.extend(z0.to_row_major());
        let opt = &self.params.optim;
        let free: Vec<bool> =
            (0..x0.len()).map(|i| if i < kk { opt.optimize_hypers } else { opt.optimize_pseudo }).collect();
        let base = self.theta.clone();
        let unpack = |v: &[f64]| -> Result<(Hyperparams, InputMatrix)> {
            Ok((base.with_unconstrained(&v[..kk])?, InputMatrix::new(rows, dim, v[kk..].to_vec())?))
        };
        let best = maximize(
            |v| {
                let (t, z) = unpack(v)?;
                collapsed_bound(&w.x, &w.y, &z, &t)
            },
            &x0,
            &free,
            opt,
        )?;
        let (theta, z) = if best.iterations == 0 { (base.clone(), z0) } else { unpack(&best.x)? };
        let model = BatchSgpModel::fit(&w.x, &w.y, &z, &theta)?;
        self.theta = theta;
        let n = w.len();
        Ok(Step {
            pred: model.predict(test)?,
            energy: model.bound(),
            bytes: model.footprint_bytes() + 8 * n * (dim + 1 + rows),
        })
    }
}

/// Streams `train` through `method`, evaluating on `test` after every batch.
///
/// When `out` is given, the CSV is written and flushed record by record, so
/// an aborted run leaves a valid prefix.
pub fn run_stream(
    method: Method,
    plan: &StreamPlan,
    params: &ModelParams,
    train: &DataBatch,
    test: &DataBatch,
    out: Option<&Path>,
) -> Result<StreamOutcome> {
    plan.validate(method)?;
    params.theta_init.validate()?;
    params.optim.validate()?;
    if params.num_pseudo == 0 && !matches!(method, Method::GpWindow) {
        return Err(GpError::invalid("num_pseudo must be at least 1"));
    }
    if train.is_empty() || test.is_empty() {
        return Err(GpError::invalid("both training and test sets must be non-empty"));
    }
    let mut writer = match out {
        Some(p) => {
            let mut w = csv::Writer::from_writer(File::create(p)?);
            w.write_record(CSV_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    if let Order::Random(seed) = plan.order {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let train = train.select(&order);

    let mut s = Streamer {
        method,
        params,
        plan,
        theta: params.theta_init.clone(),
        post: SparsePosterior::empty(train.x.dim(), &params.theta_init),
        fixed_z: None,
        window: None,
    };
    let start = Instant::now();
    let mut peak = 0usize;
    let mut records = Vec::new();
    for (k, range) in plan.batches(train.len()).into_iter().enumerate() {
        let batch = train.slice(range.start, range.end);
        let step = s.step(k, &batch, &test.x).map_err(|e| GpError::Stream { batch: k, source: Box::new(e) })?;
        let (mll, rmse) =
            metrics(&step.pred, &test.y).map_err(|e| GpError::Stream { batch: k, source: Box::new(e) })?;
        peak = peak.max(step.bytes);
        let rec = IterationRecord {
            iteration: k,
            cumulative_seconds: start.elapsed().as_secs_f64(),
            mll,
            rmse,
            energy: step.energy,
            peak_bytes: peak,
        };
        log::info!(
            "batch {k}: mll {mll:.4} rmse {rmse:.4} energy {:.4} lengthscales {:?} signal {:.4} noise {:.4}",
            step.energy,
            s.theta.lengthscales(),
            s.theta.signal_variance(),
            s.theta.noise_variance()
        );
        if let Some(w) = writer.as_mut() {
            w.write_record(rec.to_row())?;
            w.flush()?;
        }
        records.push(rec);
    }
    Ok(StreamOutcome { records, final_theta: s.theta })
}

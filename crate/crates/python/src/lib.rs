//! Python bindings: hyperparameters, the streaming model, and the batch
//! baselines. Inputs are lists of rows; outputs are plain lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use streamgp::batch_sgp;
use streamgp::exact_gp;
use streamgp::harness::equivalence;
use streamgp::harness::synth::synth_gp_stream;
use streamgp::optimizer::{init_pseudo_inputs, optimize_batch, Objective, OptimConfig};
use streamgp::streaming_pep::pep_update;
use streamgp::streaming_vfe::vfe_update;
use streamgp::{DataBatch, GpError, InputMatrix, PepConfig, SparsePosterior};

fn py_err(e: GpError) -> PyErr {
    match e {
        GpError::InvalidInput(_) | GpError::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn inputs(rows: &[Vec<f64>]) -> PyResult<InputMatrix> {
    InputMatrix::from_rows(rows).map_err(py_err)
}

fn batch(x: &[Vec<f64>], y: Vec<f64>) -> PyResult<DataBatch> {
    DataBatch::new(inputs(x)?, y).map_err(py_err)
}

/// Squared-exponential ARD hyperparameters with Gaussian noise.
#[pyclass(name = "Hyperparams", from_py_object)]
#[derive(Clone)]
struct PyHyperparams {
    inner: streamgp::Hyperparams,
}

#[pymethods]
impl PyHyperparams {
    #[new]
    #[pyo3(signature = (lengthscales, signal_variance, noise_variance, jitter=None))]
    fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64, jitter: Option<f64>) -> PyResult<Self> {
        let mut inner = streamgp::Hyperparams::new(&lengthscales, signal_variance, noise_variance).map_err(py_err)?;
        if let Some(j) = jitter {
            inner = inner.with_jitter(j);
            inner.validate().map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn lengthscales(&self) -> Vec<f64> {
        self.inner.lengthscales()
    }

    #[getter]
    fn signal_variance(&self) -> f64 {
        self.inner.signal_variance()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    fn __repr__(&self) -> String {
        format!(
            "Hyperparams(lengthscales={:?}, signal_variance={}, noise_variance={})",
            self.inner.lengthscales(),
            self.inner.signal_variance(),
            self.inner.noise_variance()
        )
    }
}

/// A streaming sparse GP: absorbs batches one at a time.
///
/// `method` is `"vfe"` or `"pep"` (Power-EP with fraction `alpha`).
#[pyclass(name = "StreamingGP")]
struct PyStreamingGp {
    post: SparsePosterior,
    theta: streamgp::Hyperparams,
    objective: Objective,
    num_pseudo: usize,
    optim: OptimConfig,
    batches: u64,
}

impl PyStreamingGp {
    fn apply(&mut self, b: &DataBatch, theta: streamgp::Hyperparams, z: &InputMatrix) -> PyResult<f64> {
        let (post, energy) = match self.objective {
            Objective::Vfe => vfe_update(&self.post, b, &theta, z).map(|(p, e)| (p, e.total)),
            Objective::Pep(cfg) => pep_update(&self.post, b, &theta, z, cfg),
        }
        .map_err(py_err)?;
        self.post = post;
        self.theta = theta;
        self.batches += 1;
        Ok(energy)
    }
}

#[pymethods]
impl PyStreamingGp {
    #[new]
    #[pyo3(signature = (theta, num_pseudo=20, method="vfe", alpha=0.5, opt_iters=50, seed=0))]
    fn new(
        theta: PyHyperparams,
        num_pseudo: usize,
        method: &str,
        alpha: f64,
        opt_iters: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let objective = match method {
            "vfe" => Objective::Vfe,
            "pep" => Objective::Pep(PepConfig::new(alpha).map_err(py_err)?),
            other => return Err(PyValueError::new_err(format!("unknown method `{other}`; use vfe or pep"))),
        };
        if num_pseudo == 0 {
            return Err(PyValueError::new_err("num_pseudo must be at least 1"));
        }
        let theta = theta.inner;
        Ok(Self {
            post: SparsePosterior::empty(theta.dim(), &theta),
            theta,
            objective,
            num_pseudo,
            optim: OptimConfig { max_iters: opt_iters, seed, ..OptimConfig::default() },
            batches: 0,
        })
    }

    /// Absorbs a batch, optionally re-fitting hyperparameters and
    /// pseudo-inputs first. Returns the batch energy.
    #[pyo3(signature = (x, y, optimize=true))]
    fn update(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>, optimize: bool) -> PyResult<f64> {
        let b = batch(&x, y)?;
        let seed = self.optim.seed.wrapping_add(self.batches);
        let z0 = init_pseudo_inputs(&self.post, &b, self.num_pseudo, seed).map_err(py_err)?;
        let (theta, z) = if optimize {
            let cfg = OptimConfig { seed, ..self.optim.clone() };
            let (t, z, _) = optimize_batch(&self.post, &b, &self.theta, &z0, self.objective, &cfg).map_err(py_err)?;
            (t, z)
        } else {
            (self.theta.clone(), z0)
        };
        self.apply(&b, theta, &z)
    }

    /// Absorbs a batch with the current hyperparameters and the given
    /// pseudo-inputs `z`. Returns the batch energy.
    fn update_fixed(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>, z: Vec<Vec<f64>>) -> PyResult<f64> {
        let b = batch(&x, y)?;
        let z = inputs(&z)?;
        self.apply(&b, self.theta.clone(), &z)
    }

    /// `(mean, latent_variance, observed_variance)` at each row of `xs`.
    fn predict(&self, xs: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let p = self.post.predict(&inputs(&xs)?, &self.theta).map_err(py_err)?;
        Ok((p.mean.as_slice().to_vec(), p.latent_var.as_slice().to_vec(), p.observed_var.as_slice().to_vec()))
    }

    #[getter]
    fn theta(&self) -> PyHyperparams {
        PyHyperparams { inner: self.theta.clone() }
    }

    #[getter]
    fn pseudo_inputs(&self) -> Vec<Vec<f64>> {
        self.post.z().to_rows()
    }

    #[getter]
    fn n_seen(&self) -> usize {
        self.post.n_seen()
    }
}

/// Log marginal likelihood of the full GP.
#[pyfunction]
fn exact_log_marginal_likelihood(x: Vec<Vec<f64>>, y: Vec<f64>, theta: PyHyperparams) -> PyResult<f64> {
    exact_gp::log_marginal_likelihood(&inputs(&x)?, &y, &theta.inner).map_err(py_err)
}

/// Collapsed variational bound of the batch sparse GP with pseudo-inputs `z`.
#[pyfunction]
fn collapsed_bound(x: Vec<Vec<f64>>, y: Vec<f64>, z: Vec<Vec<f64>>, theta: PyHyperparams) -> PyResult<f64> {
    batch_sgp::collapsed_bound(&inputs(&x)?, &y, &inputs(&z)?, &theta.inner).map_err(py_err)
}

/// Draws `(x, y)` from the GP prior; 1-D inputs come out sorted.
#[pyfunction]
#[pyo3(signature = (n, theta, seed=0))]
fn synth(n: usize, theta: PyHyperparams, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let (x, y) = synth_gp_stream(theta.inner.dim(), n, &theta.inner, seed).map_err(py_err)?;
    Ok((x.to_rows(), y))
}

/// Streaming-vs-batch consistency checks: `[(name, max_error, tolerance, passed)]`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn eval_equivalence(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let checks = equivalence::run_all(seed).map_err(py_err)?;
    Ok(checks
        .into_iter()
        .map(|c| {
            let ok = c.passed();
            (c.name, c.max_error, c.tolerance, ok)
        })
        .collect())
}

#[pymodule]
fn streamgp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperparams>()?;
    m.add_class::<PyStreamingGp>()?;
    m.add_function(wrap_pyfunction!(exact_log_marginal_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(collapsed_bound, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(eval_equivalence, m)?)?;
    Ok(())
}

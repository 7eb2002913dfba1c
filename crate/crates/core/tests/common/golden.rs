//! Golden cases: generated from the dense oracles, checked against the
//! library. Shared by `tests/golden.rs` and the acceptance runner.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde_json::{json, Map, Value};

use streamgp::batch_sgp::{collapsed_bound, BatchSgpModel};
use streamgp::exact_gp::ExactModel;
use streamgp::harness::data::DataBatch;
use streamgp::harness::metrics::metrics;
use streamgp::harness::runner::{run_stream, Method, ModelParams, Order, StreamPlan};
use streamgp::harness::synth::synth_gp_stream;
use streamgp::kernel::{kernel_diag, kernel_matrix};
use streamgp::optimizer::{init_pseudo_inputs, maximize, optimize_batch, Objective, OptimConfig};
use streamgp::streaming_pep::{pep_energy, pep_update};
use streamgp::streaming_vfe::{vfe_energy, vfe_update};
use streamgp::{PepConfig, PredictiveMarginals, SparsePosterior};

use super::dense::{self, OldPosterior, Params, Update};
use super::fixture::{self as fx, get, to_f64, to_mat, to_old, to_params, to_vec, Case, FixtureFile};
use super::nelder_mead;
use super::scenarios::{self as sc, batch, inputs, theta};

pub const FILES: [&str; 7] = [
    "kernel.json",
    "exact_gp.json",
    "batch_sgp.json",
    "streaming_vfe.json",
    "streaming_pep.json",
    "optimizer.json",
    "harness.json",
];

#[derive(Debug, Clone)]
pub struct Outcome {
    pub file: &'static str,
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error <= self.tolerance
    }
}

/// Every fixture case is generated with zero jitter so the oracle and the
/// library factorise the same matrices.
const JITTER: f64 = 0.0;

type Fields = Vec<(&'static str, Value)>;

fn case(name: &str, kind: &str, tolerance: f64, inputs: Fields, expected: Fields) -> Case {
    Case {
        name: name.into(),
        kind: kind.into(),
        tolerance,
        relative: false,
        inputs: inputs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        expected: expected.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

fn relative(mut c: Case) -> Case {
    c.relative = true;
    c
}

fn batches_json(parts: &[(DMatrix<f64>, DVector<f64>)]) -> Value {
    Value::Array(parts.iter().map(|(x, y)| json!({ "x": fx::mat(x), "y": fx::vec(y) })).collect())
}

fn to_batches(v: &Value) -> Vec<DataBatch> {
    v.as_array().unwrap().iter().map(|b| batch(&to_mat(&b["x"]), &to_vec(&b["y"]))).collect()
}

fn split(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows();
    (0..k)
        .map(|i| {
            let (a, b) = (i * n / k, (i + 1) * n / k);
            (x.rows(a, b - a).into_owned(), y.rows(a, b - a).into_owned())
        })
        .collect()
}

fn ml_fit(x: &DMatrix<f64>, y: &DVector<f64>, start: &Params) -> Vec<f64> {
    let mut x0: Vec<f64> = start.lengthscales.iter().map(|l| l.ln()).collect();
    x0.push(start.signal_var.ln());
    x0.push(start.noise_var.ln());
    let d = start.lengthscales.len();
    let f = |v: &[f64]| {
        let p = Params {
            lengthscales: v[..d].iter().map(|l| l.exp()).collect(),
            signal_var: v[d].exp(),
            noise_var: v[d + 1].exp(),
        };
        dense::exact_lml(x, y, &p)
    };
    nelder_mead::maximize(f, &x0, 0.3, 400, 1e-10).x
}

// ---------------------------------------------------------------- generation

fn kernel_cases() -> Vec<Case> {
    let p = Params::iso(1, 2.0, 3.0, 0.1);
    let x1 = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
    let x2 = DMatrix::from_row_slice(1, 1, &[1.0]);
    // (x - x')² / ℓ² = 1/4 for both rows
    let hand = DMatrix::from_element(2, 1, 3.0 * (-0.125f64).exp());

    let mut r = sc::rng(11);
    let x = sc::uniform_inputs(&mut r, 15, 3, -2.0, 2.0);
    let ard = Params { lengthscales: vec![0.7, 1.3, 2.1], signal_var: 1.7, noise_var: 0.1 };
    let diag = dense::se_kernel(&x, &x, &ard).diagonal();
    vec![
        case(
            "hand-evaluated two-by-one block",
            "kernel_block",
            1e-12,
            vec![("x1", fx::mat(&x1)), ("x2", fx::mat(&x2)), ("params", fx::params(&p))],
            vec![("k", fx::mat(&hand))],
        ),
        case(
            "diagonal equals full gram diagonal",
            "kernel_diag",
            1e-12,
            vec![("x", fx::mat(&x)), ("params", fx::params(&ard))],
            vec![("diag", fx::vec(&diag))],
        ),
    ]
}

fn exact_cases() -> Vec<Case> {
    let mut r = sc::rng(21);
    let p500 = Params::iso(2, 1.5, 1.0, 0.1);
    let x500 = sc::uniform_inputs(&mut r, 500, 2, 0.0, 10.0);
    let y500 = sc::gp_sample(&mut r, &x500, &p500);

    let p4 = Params { lengthscales: vec![0.9, 1.4], signal_var: 1.3, noise_var: 0.2 };
    let x4 = sc::uniform_inputs(&mut r, 4, 2, 0.0, 3.0);
    let y4 = sc::normal_vec(&mut r, 4);

    let p6 = Params::iso(1, 1.1, 0.8, 0.05);
    let x6 = sc::uniform_inputs(&mut r, 6, 1, 0.0, 5.0);
    let y6 = sc::gp_sample(&mut r, &x6, &p6);
    let xs = DMatrix::from_row_slice(3, 1, &[-0.5, 2.2, 6.0]);
    let (mean, var) = dense::exact_predict(&x6, &y6, &xs, &p6);
    vec![
        case(
            "cholesky of a 500-point draw reconstructs K + noise",
            "exact_reconstruction",
            1e-8,
            vec![("x", fx::mat(&x500)), ("y", fx::vec(&y500)), ("params", fx::params(&p500))],
            vec![("residual", json!(0.0))],
        ),
        case(
            "log marginal likelihood, four points",
            "exact_lml",
            1e-10,
            vec![("x", fx::mat(&x4)), ("y", fx::vec(&y4)), ("params", fx::params(&p4))],
            vec![("lml", json!(dense::exact_lml(&x4, &y4, &p4)))],
        ),
        case(
            "predictive marginals, six points",
            "exact_predict",
            1e-10,
            vec![("x", fx::mat(&x6)), ("y", fx::vec(&y6)), ("xs", fx::mat(&xs)), ("params", fx::params(&p6))],
            vec![("mean", fx::vec(&mean)), ("latent_var", fx::vec(&var))],
        ),
    ]
}

fn sgp_cases() -> Vec<Case> {
    let mut r = sc::rng(31);
    let p = Params::iso(1, 1.2, 1.1, 0.15);
    let x = sc::uniform_inputs(&mut r, 20, 1, 0.0, 10.0);
    let y = sc::gp_sample(&mut r, &x, &p);
    let z = sc::spaced(5, 0.0, 10.0);
    let xs = DMatrix::from_row_slice(4, 1, &[-1.0, 3.3, 7.7, 11.0]);
    let inp = || vec![("x", fx::mat(&x)), ("y", fx::vec(&y)), ("z", fx::mat(&z)), ("params", fx::params(&p))];
    let (m, s) = dense::optimal_qu(&x, &y, &z, &p);
    let (shift, prec) = dense::natural(&m, &s);
    let (pm, pv) = dense::sparse_predict(&xs, &z, &m, &s, &p);
    let mut pred_in = inp();
    pred_in.push(("xs", fx::mat(&xs)));
    vec![
        case(
            "collapsed bound, N=20 M=5",
            "sgp_bound",
            1e-8,
            inp(),
            vec![("bound", json!(dense::collapsed_bound(&x, &y, &z, &p)))],
        ),
        case(
            "optimal q(u) natural parameters",
            "sgp_natural",
            1e-8,
            inp(),
            vec![("shift", fx::vec(&shift)), ("precision", fx::mat(&prec))],
        ),
        case(
            "sparse predictive marginals",
            "sgp_predict",
            1e-8,
            pred_in,
            vec![("mean", fx::vec(&pm)), ("latent_var", fx::vec(&pv))],
        ),
    ]
}

fn online_case(
    name: &str,
    old: Option<&OldPosterior>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    p: &Params,
    update: Update,
    tol: f64,
) -> Case {
    let res = dense::online_step(old, x, y, z, p, update);
    let xs = DMatrix::from_row_slice(5, 1, &[-1.0, 2.5, 6.0, 9.5, 13.0]);
    let (pm, pv) = dense::sparse_predict(&xs, z, &res.mean, &res.cov, p);
    let alpha = match update {
        Update::Vfe => Value::Null,
        Update::PowerEp(a) => json!(a),
    };
    case(
        name,
        "online",
        tol,
        vec![
            ("old", old.map(fx::old).unwrap_or(Value::Null)),
            ("x", fx::mat(x)),
            ("y", fx::vec(y)),
            ("z", fx::mat(z)),
            ("params", fx::params(p)),
            ("alpha", alpha),
            ("xs", fx::mat(&xs)),
        ],
        vec![
            ("energy", json!(res.energy)),
            ("mean", fx::vec(&res.mean)),
            ("cov", fx::mat(&res.cov)),
            ("pred_mean", fx::vec(&pm)),
            ("pred_var", fx::vec(&pv)),
        ],
    )
}

fn vfe_cases() -> Vec<Case> {
    let mut out = Vec::new();

    // two batches, fixed θ and Z, against the batch optimum on the union
    let mut r = sc::rng(41);
    let p = Params::iso(1, 0.9, 1.0, 0.1);
    let x = sc::uniform_inputs(&mut r, 80, 1, 0.0, 10.0);
    let y = sc::gp_sample(&mut r, &x, &p);
    let z = sc::spaced(8, 0.0, 10.0);
    let xs = DMatrix::from_fn(12, 1, |i, _| -1.0 + i as f64);
    let (m, s) = dense::optimal_qu(&x, &y, &z, &p);
    let (pm, pv) = dense::sparse_predict(&xs, &z, &m, &s, &p);
    out.push(case(
        "two batches equal the batch optimum on the union",
        "vfe_batches",
        1e-6,
        vec![
            ("batches", batches_json(&split(&x, &y, 2))),
            ("z", fx::mat(&z)),
            ("xs", fx::mat(&xs)),
            ("params", fx::params(&p)),
        ],
        vec![
            ("mean", fx::vec(&m)),
            ("cov", fx::mat(&s)),
            ("energy", json!(dense::collapsed_bound(&x, &y, &z, &p))),
            ("pred_mean", fx::vec(&pm)),
            ("pred_var", fx::vec(&pv)),
        ],
    ));

    // pseudo-inputs at every input seen so far, against the exact GP
    let p2 = Params::iso(2, 0.8, 1.0, 0.1);
    let xg = sc::grid(5, 6);
    let yg = sc::gp_sample(&mut r, &xg, &p2);
    let xs2 = DMatrix::from_fn(7, 2, |i, d| if d == 0 { 0.7 * i as f64 } else { 5.0 - 0.6 * i as f64 });
    let (em, ev) = dense::exact_predict(&xg, &yg, &xs2, &p2);
    out.push(case(
        "pseudo-inputs at the data recover the exact GP",
        "vfe_data_pseudo",
        1e-6,
        vec![("batches", batches_json(&split(&xg, &yg, 3))), ("xs", fx::mat(&xs2)), ("params", fx::params(&p2))],
        vec![
            ("energy", json!(dense::exact_lml(&xg, &yg, &p2))),
            ("pred_mean", fx::vec(&em)),
            ("pred_var", fx::vec(&ev)),
        ],
    ));

    // naive energy on a two-batch chain with drifted θ and moved Z
    let fit = Params::iso(1, 1.1, 1.0, 0.12);
    let x1 = sc::uniform_inputs(&mut r, 30, 1, 0.0, 7.0);
    let y1 = sc::gp_sample(&mut r, &x1, &fit);
    let z1 = sc::spaced(6, 0.0, 7.0);
    let first = dense::online_step(None, &x1, &y1, &z1, &fit, Update::Vfe);
    let old = OldPosterior { z: z1.clone(), mean: first.mean, cov: first.cov, params: fit.clone() };
    let x2 = sc::uniform_inputs(&mut r, 30, 1, 5.0, 12.0);
    let y2 = sc::gp_sample(&mut r, &x2, &fit);
    let z2 = sc::spaced(8, 0.0, 12.0);
    let drift = Params::iso(1, 1.25, 0.9, 0.1);
    out.push(online_case("first batch from the empty state", None, &x1, &y1, &z1, &fit, Update::Vfe, 1e-7));
    out.push(online_case(
        "second batch with new hyperparameters and pseudo-inputs",
        Some(&old),
        &x2,
        &y2,
        &z2,
        &drift,
        Update::Vfe,
        1e-7,
    ));
    let inst = sc::random_online(43);
    out.push(online_case(
        "random positive-definite old state",
        Some(&inst.old),
        &inst.x,
        &inst.y,
        &inst.z,
        &inst.params,
        Update::Vfe,
        1e-7,
    ));
    out
}

fn pep_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let inst = sc::random_online(51);
    let vfe = dense::online_step(Some(&inst.old), &inst.x, &inst.y, &inst.z, &inst.params, Update::Vfe);
    let (shift, prec) = dense::natural(&vfe.mean, &vfe.cov);
    out.push(relative(case(
        "alpha 1e-6 approaches the variational update",
        "pep_vs_vfe",
        1e-4,
        vec![
            ("old", fx::old(&inst.old)),
            ("x", fx::mat(&inst.x)),
            ("y", fx::vec(&inst.y)),
            ("z", fx::mat(&inst.z)),
            ("params", fx::params(&inst.params)),
            ("alpha", json!(1e-6)),
        ],
        vec![("shift", fx::vec(&shift)), ("precision", fx::mat(&prec)), ("energy", json!(vfe.energy))],
    )));

    let mut r = sc::rng(52);
    let p = Params::iso(2, 0.8, 1.0, 0.1);
    let xg = sc::grid(4, 5);
    let yg = sc::gp_sample(&mut r, &xg, &p);
    let (m, s) = dense::exact_posterior_at_inputs(&xg, &yg, &p);
    out.push(case(
        "alpha 1 with pseudo-inputs at the data is exact",
        "pep_exact",
        1e-6,
        vec![("x", fx::mat(&xg)), ("y", fx::vec(&yg)), ("params", fx::params(&p))],
        vec![("mean", fx::vec(&m)), ("cov", fx::mat(&s)), ("energy", json!(dense::exact_lml(&xg, &yg, &p)))],
    ));

    let p1 = Params::iso(1, 0.9, 1.0, 0.1);
    let x = sc::uniform_inputs(&mut r, 60, 1, 0.0, 10.0);
    let y = sc::gp_sample(&mut r, &x, &p1);
    let z = sc::spaced(8, 0.0, 10.0);
    for alpha in [0.5, 1.0] {
        let one = dense::online_step(None, &x, &y, &z, &p1, Update::PowerEp(alpha));
        out.push(case(
            &format!("two batches at alpha {alpha} equal one pass on the union"),
            "pep_batches",
            1e-6,
            vec![
                ("batches", batches_json(&split(&x, &y, 2))),
                ("z", fx::mat(&z)),
                ("params", fx::params(&p1)),
                ("alpha", json!(alpha)),
            ],
            vec![("mean", fx::vec(&one.mean)), ("cov", fx::mat(&one.cov))],
        ));
    }

    for (seed, alpha) in [(53, 0.5), (54, 0.25), (55, 1.0)] {
        let inst = sc::random_online(seed);
        out.push(online_case(
            &format!("random positive-definite old state, alpha {alpha}"),
            Some(&inst.old),
            &inst.x,
            &inst.y,
            &inst.z,
            &inst.params,
            Update::PowerEp(alpha),
            1e-7,
        ));
    }
    out.push(online_case("empty old state, alpha 0.5", None, &x, &y, &z, &p1, Update::PowerEp(0.5), 1e-7));
    out
}

/// Optimiser budget used by the fixture cases and their checks.
fn opt_cfg(max_iters: usize) -> OptimConfig {
    OptimConfig { max_iters, convergence_tol: 1e-10, ..OptimConfig::default() }
}

fn optimizer_cases() -> Vec<Case> {
    let mut out = Vec::new();

    // single batch from the empty state vs the same optimiser on the batch bound
    let mut r = sc::rng(61);
    let truth = Params::iso(1, 0.8, 1.0, 0.1);
    let x = sc::uniform_inputs(&mut r, 100, 1, 0.0, 10.0);
    let y = sc::gp_sample(&mut r, &x, &truth);
    let z0 = sc::spaced(10, 0.0, 10.0);
    let start = Params::iso(1, 1.0, 1.0, 0.2);
    let iters = 60;
    let t0 = theta(&start, JITTER);
    let xin = inputs(&x);
    let ys = y.as_slice().to_vec();
    let k = t0.num_unconstrained();
    let mut v0 = t0.to_unconstrained();
    v0.extend(inputs(&z0).to_row_major());
    let best = maximize(
        |v: &[f64]| {
            let t = t0.with_unconstrained(&v[..k])?;
            let z = streamgp::InputMatrix::new(z0.nrows(), 1, v[k..].to_vec())?;
            collapsed_bound(&xin, &ys, &z, &t)
        },
        &v0,
        &vec![true; v0.len()],
        &opt_cfg(iters),
    )
    .unwrap();
    out.push(case(
        "single batch matches the optimised batch bound",
        "opt_vs_collapsed",
        1e-3,
        vec![
            ("x", fx::mat(&x)),
            ("y", fx::vec(&y)),
            ("z", fx::mat(&z0)),
            ("params", fx::params(&start)),
            ("max_iters", json!(iters)),
        ],
        vec![("energy", json!(best.value))],
    ));

    // streamed hyperparameters against full-data maximum likelihood
    let (xs, ys) = synth_gp_stream(1, 500, &theta(&truth, 1e-8), 62).unwrap();
    let xd = xs.as_matrix().clone();
    let yd = DVector::from_vec(ys);
    let ml = ml_fit(&xd, &yd, &Params::iso(1, 1.0, 1.0, 0.1));
    out.push(case(
        "five streamed batches track the full-data ML lengthscale",
        "opt_stream_lengthscale",
        0.3,
        vec![
            ("x", fx::mat(&xd)),
            ("y", fx::vec(&yd)),
            ("params", fx::params(&Params::iso(1, 1.0, 1.0, 0.1))),
            ("batches", json!(5)),
            ("num_pseudo", json!(15)),
            ("max_iters", json!(50)),
        ],
        vec![("log_lengthscale", json!(ml[0]))],
    ));

    // M_b = M_a, batch inside the old hull
    let za = sc::spaced(10, 0.0, 10.0);
    let xb = sc::uniform_inputs(&mut r, 100, 1, 2.0, 8.0);
    let yb = sc::normal_vec(&mut r, 100);
    let n_seen = 400;
    let replaced = ((10 * 100) as f64 / (100 + n_seen) as f64).ceil() as usize;
    let retained = 10 - replaced;
    assert!(retained * 2 > 10);
    out.push(case(
        "most old pseudo-inputs survive re-initialisation",
        "init_retention",
        0.0,
        vec![
            ("z_old", fx::mat(&za)),
            ("n_seen", json!(n_seen)),
            ("x", fx::mat(&xb)),
            ("y", fx::vec(&yb)),
            ("num_pseudo", json!(10)),
        ],
        vec![("retained", json!(retained))],
    ));
    out
}

fn harness_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let loud = Params::iso(1, 0.8, 1.0, 4.0);
    out.push(relative(case(
        "noise-dominated sample variance",
        "synth_variance",
        0.2,
        vec![("n", json!(2000)), ("params", fx::params(&loud)), ("seeds", json!((0..10).collect::<Vec<u64>>()))],
        vec![("variance", json!(loud.signal_var + loud.noise_var))],
    )));

    let truth = Params::iso(1, 0.8, 1.0, 0.1);
    let (xs, ys) = synth_gp_stream(1, 1000, &theta(&truth, 1e-8), 71).unwrap();
    let xd = xs.as_matrix().clone();
    let yd = DVector::from_vec(ys);
    let ml = ml_fit(&xd, &yd, &Params::iso(1, 1.0, 1.0, 0.2));
    out.push(case(
        "ML refit of a 1000-point sample recovers the lengthscale",
        "synth_refit",
        0.3,
        vec![("x", fx::mat(&xd)), ("y", fx::vec(&yd)), ("params", fx::params(&Params::iso(1, 1.0, 1.0, 0.2)))],
        vec![("log_lengthscale_oracle", json!(ml[0])), ("log_lengthscale_true", json!(truth.lengthscales[0].ln()))],
    ));

    // fixed θ and Z: the stream's final MLL equals the batch model's
    let (x, y) = synth_gp_stream(1, 240, &theta(&truth, 1e-8), 72).unwrap();
    let all = DataBatch::new(x, y).unwrap();
    let train_idx: Vec<usize> = (0..240).filter(|i| i % 4 != 3).collect();
    let test_idx: Vec<usize> = (0..240).filter(|i| i % 4 == 3).collect();
    // shuffled, so the first batch (which places Z) spans the input range
    let mut order = train_idx.clone();
    order.shuffle(&mut sc::rng(72));
    let (train, test) = (all.select(&order), all.select(&test_idx));
    let bs = 60;
    let z = init_pseudo_inputs(&SparsePosterior::empty(1, &theta(&truth, JITTER)), &train.slice(0, bs), 12, 5).unwrap();
    let (tx, ty) = (train.x.as_matrix().clone(), DVector::from_vec(train.y.clone()));
    let (m, s) = dense::optimal_qu(&tx, &ty, z.as_matrix(), &truth);
    let (pm, pv) = dense::sparse_predict(test.x.as_matrix(), z.as_matrix(), &m, &s, &truth);
    let ov: Vec<f64> = pv.iter().map(|v| v + truth.noise_var).collect();
    let (mll, _) = dense::metrics(pm.as_slice(), &ov, &test.y);
    out.push(case(
        "fixed-parameter stream ends at the batch model's MLL",
        "run_fixed",
        1e-6,
        vec![
            ("train_x", fx::mat(train.x.as_matrix())),
            ("train_y", json!(train.y)),
            ("test_x", fx::mat(test.x.as_matrix())),
            ("test_y", json!(test.y)),
            ("params", fx::params(&truth)),
            ("batch_size", json!(bs)),
            ("num_pseudo", json!(12)),
            ("seed", json!(5)),
        ],
        vec![("mll", json!(mll))],
    ));

    let mut r = sc::rng(73);
    let mean = sc::normal_vec(&mut r, 9);
    let var = DVector::from_fn(9, |i, _| 0.1 + 0.2 * i as f64);
    let yt = sc::normal_vec(&mut r, 9);
    let (mll, rmse) = dense::metrics(mean.as_slice(), var.as_slice(), yt.as_slice());
    out.push(case(
        "metrics against per-point summation",
        "metrics",
        1e-12,
        vec![("mean", fx::vec(&mean)), ("observed_var", fx::vec(&var)), ("y", fx::vec(&yt))],
        vec![("mll", json!(mll)), ("rmse", json!(rmse))],
    ));
    out
}

pub fn generate(file: &str) -> FixtureFile {
    let cases = match file {
        "kernel.json" => kernel_cases(),
        "exact_gp.json" => exact_cases(),
        "batch_sgp.json" => sgp_cases(),
        "streaming_vfe.json" => vfe_cases(),
        "streaming_pep.json" => pep_cases(),
        "optimizer.json" => optimizer_cases(),
        "harness.json" => harness_cases(),
        other => panic!("unknown fixture file {other}"),
    };
    FixtureFile { cases }
}

// -------------------------------------------------------------------- checks

fn flat(v: &Value) -> Vec<f64> {
    match v {
        Value::Number(n) => vec![n.as_f64().unwrap()],
        Value::Array(a) => a.iter().map(to_f64).collect(),
        // matrices are stored row-major
        Value::Object(_) => v["data"].as_array().unwrap().iter().map(to_f64).collect(),
        _ => panic!("unsupported fixture value {v}"),
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

fn pred_fields(p: &PredictiveMarginals, mean: &'static str, var: &'static str) -> Vec<(&'static str, Vec<f64>)> {
    vec![(mean, p.mean.as_slice().to_vec()), (var, p.latent_var.as_slice().to_vec())]
}

fn params_in(m: &Map<String, Value>) -> Params {
    to_params(get(m, "params"))
}

fn actual(c: &Case) -> Vec<(&'static str, Vec<f64>)> {
    let i = &c.inputs;
    let mat = |k: &str| to_mat(get(i, k));
    let vecv = |k: &str| to_vec(get(i, k));
    let num = |k: &str| to_f64(get(i, k));
    match c.kind.as_str() {
        "kernel_block" => {
            let t = theta(&params_in(i), JITTER);
            vec![("k", row_major(&kernel_matrix(&inputs(&mat("x1")), &inputs(&mat("x2")), &t).unwrap()))]
        }
        "kernel_diag" => {
            let t = theta(&params_in(i), JITTER);
            vec![("diag", kernel_diag(&inputs(&mat("x")), &t).unwrap().as_slice().to_vec())]
        }
        "exact_reconstruction" => {
            let p = params_in(i);
            let x = mat("x");
            let model = ExactModel::fit(&inputs(&x), vecv("y").as_slice(), &theta(&p, JITTER)).unwrap();
            let l = model.cholesky_factor();
            let mut a = dense::se_kernel(&x, &x, &p);
            for d in 0..a.nrows() {
                a[(d, d)] += p.noise_var;
            }
            vec![("residual", vec![(l * l.transpose() - &a).norm() / a.norm()])]
        }
        "exact_lml" => {
            let m = ExactModel::fit(&inputs(&mat("x")), vecv("y").as_slice(), &theta(&params_in(i), JITTER)).unwrap();
            vec![("lml", vec![m.log_marginal_likelihood()])]
        }
        "exact_predict" => {
            let m = ExactModel::fit(&inputs(&mat("x")), vecv("y").as_slice(), &theta(&params_in(i), JITTER)).unwrap();
            pred_fields(&m.predict(&inputs(&mat("xs"))).unwrap(), "mean", "latent_var")
        }
        "sgp_bound" | "sgp_natural" | "sgp_predict" => {
            let (x, y, z) = (inputs(&mat("x")), vecv("y"), inputs(&mat("z")));
            let t = theta(&params_in(i), JITTER);
            match c.kind.as_str() {
                "sgp_bound" => vec![("bound", vec![collapsed_bound(&x, y.as_slice(), &z, &t).unwrap()])],
                "sgp_natural" => {
                    let (s, p) = BatchSgpModel::fit(&x, y.as_slice(), &z, &t).unwrap().natural_parameters();
                    vec![("shift", s.as_slice().to_vec()), ("precision", row_major(&p))]
                }
                _ => {
                    let m = BatchSgpModel::fit(&x, y.as_slice(), &z, &t).unwrap();
                    pred_fields(&m.predict(&inputs(&mat("xs"))).unwrap(), "mean", "latent_var")
                }
            }
        }
        "vfe_batches" => {
            let t = theta(&params_in(i), JITTER);
            let z = inputs(&mat("z"));
            let mut post = SparsePosterior::empty(1, &t);
            let mut total = 0.0;
            for b in to_batches(get(i, "batches")) {
                let (p, e) = vfe_update(&post, &b, &t, &z).unwrap();
                post = p;
                total += e.total;
            }
            let mut out = vec![
                ("mean", post.mean().as_slice().to_vec()),
                ("cov", row_major(post.cov())),
                ("energy", vec![total]),
            ];
            out.extend(pred_fields(&post.predict(&inputs(&mat("xs")), &t).unwrap(), "pred_mean", "pred_var"));
            out
        }
        "vfe_data_pseudo" => {
            let t = theta(&params_in(i), JITTER);
            let batches = to_batches(get(i, "batches"));
            let mut post = SparsePosterior::empty(batches[0].x.dim(), &t);
            let mut total = 0.0;
            let mut seen: Option<streamgp::InputMatrix> = None;
            for b in batches {
                let z = match &seen {
                    Some(s) => s.vstack(&b.x).unwrap(),
                    None => b.x.clone(),
                };
                let (p, e) = vfe_update(&post, &b, &t, &z).unwrap();
                post = p;
                total += e.total;
                seen = Some(z);
            }
            let mut out = vec![("energy", vec![total])];
            out.extend(pred_fields(&post.predict(&inputs(&mat("xs")), &t).unwrap(), "pred_mean", "pred_var"));
            out
        }
        "online" => {
            let t = theta(&params_in(i), JITTER);
            let old = match get(i, "old") {
                Value::Null => SparsePosterior::empty(1, &t),
                v => sc::state(&to_old(v), JITTER, 100),
            };
            let b = batch(&mat("x"), &vecv("y"));
            let z = inputs(&mat("z"));
            let (post, energy) = match get(i, "alpha") {
                Value::Null => {
                    let (p, e) = vfe_update(&old, &b, &t, &z).unwrap();
                    let again = vfe_energy(&old, &b, &t, &z).unwrap().total;
                    assert_eq!(again, e.total, "energy-only path disagrees with the update");
                    (p, e.total)
                }
                a => {
                    let cfg = PepConfig::new(to_f64(a)).unwrap();
                    let (p, e) = pep_update(&old, &b, &t, &z, cfg).unwrap();
                    let again = pep_energy(&old, &b, &t, &z, cfg).unwrap();
                    assert_eq!(again, e, "energy-only path disagrees with the update");
                    (p, e)
                }
            };
            let mut out = vec![
                ("energy", vec![energy]),
                ("mean", post.mean().as_slice().to_vec()),
                ("cov", row_major(post.cov())),
            ];
            out.extend(pred_fields(&post.predict(&inputs(&mat("xs")), &t).unwrap(), "pred_mean", "pred_var"));
            out
        }
        "pep_vs_vfe" => {
            let t = theta(&params_in(i), JITTER);
            let old = sc::state(&to_old(get(i, "old")), JITTER, 100);
            let cfg = PepConfig::new(num("alpha")).unwrap();
            let (post, energy) = pep_update(&old, &batch(&mat("x"), &vecv("y")), &t, &inputs(&mat("z")), cfg).unwrap();
            let (s, p) = post.natural_parameters();
            vec![("shift", s.as_slice().to_vec()), ("precision", row_major(&p)), ("energy", vec![energy])]
        }
        "pep_exact" => {
            let t = theta(&params_in(i), JITTER);
            let x = mat("x");
            let cfg = PepConfig::new(1.0).unwrap();
            let (post, energy) =
                pep_update(&SparsePosterior::empty(x.ncols(), &t), &batch(&x, &vecv("y")), &t, &inputs(&x), cfg)
                    .unwrap();
            vec![("mean", post.mean().as_slice().to_vec()), ("cov", row_major(post.cov())), ("energy", vec![energy])]
        }
        "pep_batches" => {
            let t = theta(&params_in(i), JITTER);
            let z = inputs(&mat("z"));
            let cfg = PepConfig::new(num("alpha")).unwrap();
            let mut post = SparsePosterior::empty(1, &t);
            for b in to_batches(get(i, "batches")) {
                post = pep_update(&post, &b, &t, &z, cfg).unwrap().0;
            }
            vec![("mean", post.mean().as_slice().to_vec()), ("cov", row_major(post.cov()))]
        }
        "opt_vs_collapsed" => {
            let t = theta(&params_in(i), JITTER);
            let cfg = opt_cfg(num("max_iters") as usize);
            let b = batch(&mat("x"), &vecv("y"));
            let (_, _, e) =
                optimize_batch(&SparsePosterior::empty(1, &t), &b, &t, &inputs(&mat("z")), Objective::Vfe, &cfg)
                    .unwrap();
            vec![("energy", vec![e])]
        }
        "opt_stream_lengthscale" => {
            let t = theta(&params_in(i), 1e-6);
            let data = batch(&mat("x"), &vecv("y"));
            let k = num("batches") as usize;
            let m = num("num_pseudo") as usize;
            let cfg = opt_cfg(num("max_iters") as usize);
            let n = data.len();
            let (mut post, mut th) = (SparsePosterior::empty(1, &t), t.clone());
            for j in 0..k {
                let b = data.slice(j * n / k, (j + 1) * n / k);
                let z0 = init_pseudo_inputs(&post, &b, m, j as u64).unwrap();
                let (t2, z, _) = optimize_batch(&post, &b, &th, &z0, Objective::Vfe, &cfg).unwrap();
                post = vfe_update(&post, &b, &t2, &z).unwrap().0;
                th = t2;
            }
            vec![("log_lengthscale", vec![th.log_lengthscales[0]])]
        }
        "init_retention" => {
            let fit = theta(&Params::iso(1, 1.0, 1.0, 0.1), 1e-6);
            let za = mat("z_old");
            let ma = za.nrows();
            let old = SparsePosterior::from_moments(
                &inputs(&za),
                &DVector::zeros(ma),
                &(dense::se_kernel(&za, &za, &Params::iso(1, 1.0, 1.0, 0.1)) * 0.5),
                &fit,
                num("n_seen") as usize,
            )
            .unwrap();
            let z = init_pseudo_inputs(&old, &batch(&mat("x"), &vecv("y")), num("num_pseudo") as usize, 0).unwrap();
            let old_rows = old.z().to_rows();
            let kept = z.to_rows().iter().filter(|r| old_rows.contains(r)).count();
            vec![("retained", vec![kept as f64])]
        }
        "synth_variance" => {
            let t = theta(&params_in(i), 1e-6);
            let n = num("n") as usize;
            let seeds: Vec<u64> = get(i, "seeds").as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
            let mut total = 0.0;
            for &s in &seeds {
                let (_, y) = synth_gp_stream(1, n, &t, s).unwrap();
                let mu = y.iter().sum::<f64>() / n as f64;
                total += y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
            }
            vec![("variance", vec![total / seeds.len() as f64])]
        }
        "synth_refit" => {
            let start = theta(&params_in(i), 1e-6);
            let (x, y) = (inputs(&mat("x")), vecv("y"));
            let x0 = start.to_unconstrained();
            let best = maximize(
                |v: &[f64]| {
                    Ok(ExactModel::fit(&x, y.as_slice(), &start.with_unconstrained(v)?)?.log_marginal_likelihood())
                },
                &x0,
                &vec![true; x0.len()],
                &opt_cfg(40),
            )
            .unwrap();
            vec![("log_lengthscale_oracle", vec![best.x[0]]), ("log_lengthscale_true", vec![best.x[0]])]
        }
        "run_fixed" => {
            let t = theta(&params_in(i), JITTER);
            let train = batch(&mat("train_x"), &vecv("train_y"));
            let test = batch(&mat("test_x"), &vecv("test_y"));
            let params = ModelParams {
                theta_init: t,
                num_pseudo: num("num_pseudo") as usize,
                optim: OptimConfig { optimize_hypers: false, optimize_pseudo: false, ..OptimConfig::default() },
                seed: num("seed") as u64,
            };
            let plan = StreamPlan {
                batch_size: num("batch_size") as usize,
                initial_train: 0,
                order: Order::AsGiven,
                window_size: 1,
            };
            let out = run_stream(Method::SsgpVfe, &plan, &params, &train, &test, None).unwrap();
            vec![("mll", vec![out.records.last().unwrap().mll])]
        }
        "metrics" => {
            let p = PredictiveMarginals {
                mean: vecv("mean"),
                latent_var: DVector::zeros(9),
                observed_var: vecv("observed_var"),
            };
            let (mll, rmse) = metrics(&p, vecv("y").as_slice()).unwrap();
            vec![("mll", vec![mll]), ("rmse", vec![rmse])]
        }
        other => panic!("unknown case kind {other}"),
    }
}

/// Largest deviation of the library from the frozen expectation.
pub fn case_error(c: &Case) -> f64 {
    let mut worst: f64 = 0.0;
    for (key, got) in actual(c) {
        let want = flat(get(&c.expected, key));
        assert_eq!(got.len(), want.len(), "{}: `{key}` has the wrong length", c.name);
        let scale = if c.relative { want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300) } else { 1.0 };
        for (a, b) in got.iter().zip(&want) {
            let e = (a - b).abs() / scale;
            if e.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(e);
        }
    }
    worst
}

pub fn check_file(file: &'static str) -> Vec<Outcome> {
    fx::load(file)
        .cases
        .iter()
        .map(|c| Outcome { file, name: c.name.clone(), error: case_error(c), tolerance: c.tolerance })
        .collect()
}

pub fn check_all() -> Vec<Outcome> {
    FILES.iter().flat_map(|f| check_file(f)).collect()
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streamgp::harness::data::{interleave_split, load_csv, scale_inputs, write_csv};
use streamgp::harness::equivalence;
use streamgp::harness::runner::{run_stream, Method, ModelParams, Order, StreamPlan};
use streamgp::harness::synth::{synth_gp_stream, SynthSpec};
use streamgp::kernel::{Hyperparams, DEFAULT_JITTER};
use streamgp::optimizer::OptimConfig;
use streamgp::{GpError, Result};

#[derive(Parser, Debug)]
#[command(name = "streamgp", version, about = "Streaming sparse GP regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream a dataset through one method and write per-batch metrics.
    Run(RunArgs),
    /// Sample a synthetic dataset from a GP prior.
    Synth(SynthArgs),
    /// Check the streaming updates against their batch counterparts.
    EvalEquivalence {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// ssgp-vfe, ssgp-pep, gp-window or sgp-window
    #[arg(long)]
    method: String,
    /// Power-EP fraction, used by ssgp-pep.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// e.g. `dim=1,n=2000,lengthscale=0.8,signal_var=1,noise_var=0.1,seed=0`
    #[arg(long)]
    synthetic: Option<String>,
    /// Comma-separated input columns (CSV data only).
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Size of the first batch (0: same as --batch-size).
    #[arg(long, default_value_t = 0)]
    initial_train: usize,
    #[arg(long, default_value_t = 20)]
    num_pseudo: usize,
    /// Observations kept by the windowed baselines.
    #[arg(long, default_value_t = 1000)]
    window: usize,
    #[arg(long)]
    fix_hypers: bool,
    /// Keep the pseudo-inputs placed on the first batch for the whole run.
    #[arg(long)]
    fix_pseudo: bool,
    #[arg(long, default_value_t = 50)]
    opt_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Every k-th row trains, the rest test.
    #[arg(long, default_value_t = 2)]
    test_stride: usize,
    /// `as-given` or `random:<seed>`
    #[arg(long, default_value = "as-given")]
    order: String,
    /// Linearly map every input column onto [0, 10] first.
    #[arg(long)]
    scale_inputs: bool,
    #[arg(long, default_value_t = 1.0)]
    init_lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    init_signal_var: f64,
    #[arg(long, default_value_t = 0.1)]
    init_noise_var: f64,
    /// Diagonal jitter, as a fraction of the signal variance.
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    jitter: f64,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.8)]
    lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_var: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run(args: RunArgs) -> Result<()> {
    let method = Method::parse(&args.method, args.alpha)?;
    let (x, y) = match (&args.data, &args.synthetic) {
        (Some(path), _) => {
            if args.x_cols.is_empty() {
                return Err(GpError::InvalidInput("--x-cols is required with --data".into()));
            }
            load_csv(path, &args.x_cols, &args.y_col)?
        }
        (None, Some(spec)) => spec.parse::<SynthSpec>()?.generate()?,
        (None, None) => unreachable!("clap enforces a data source"),
    };
    let x = if args.scale_inputs { scale_inputs(&x, 0.0, 10.0)?.0 } else { x };
    let (train, test) = interleave_split(&x, &y, args.test_stride)?;

    let theta = Hyperparams::isotropic(x.dim(), args.init_lengthscale, args.init_signal_var, args.init_noise_var)?
        .with_jitter(args.jitter);
    let params = ModelParams {
        theta_init: theta,
        num_pseudo: args.num_pseudo,
        optim: OptimConfig {
            max_iters: args.opt_iters,
            optimize_hypers: !args.fix_hypers,
            optimize_pseudo: !args.fix_pseudo,
            seed: args.seed,
            ..OptimConfig::default()
        },
        seed: args.seed,
    };
    let plan = StreamPlan {
        batch_size: args.batch_size,
        initial_train: args.initial_train,
        order: args.order.parse::<Order>()?,
        window_size: args.window,
    };
    let records = run_stream(method, &plan, &params, &train, &test, Some(&args.out))?.records;
    if let Some(last) = records.last() {
        println!(
            "{} batches, final mll {:.4}, rmse {:.4}, {:.2}s",
            records.len(),
            last.mll,
            last.rmse,
            last.cumulative_seconds
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let theta = Hyperparams::isotropic(args.dim, args.lengthscale, args.signal_var, args.noise_var)?;
    let (x, y) = synth_gp_stream(args.dim, args.n, &theta, args.seed)?;
    write_csv(&args.out, &x, &y)
}

fn eval_equivalence(seed: u64) -> Result<bool> {
    let checks = equivalence::run_all(seed)?;
    let mut ok = true;
    for c in &checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        println!("{tag}  {}  (max error {:.3e}, tolerance {:.0e})", c.name, c.max_error, c.tolerance);
        ok &= c.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Synth(args) => synth(args).map(|_| true),
        Command::EvalEquivalence { seed } => eval_equivalence(seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

//! `cbayes`: conformal Bayesian prediction sets from the command line.
//!
//! Subcommands: `sample` (built-in MCMC to a draws CSV), `conformal` /
//! `group-conformal` (prediction sets per test point), `bayes` / `split`
//! (baseline intervals), `bench` (repeated-simulation coverage harness),
//! `diagnose` (importance-weight ESS profiles).
//!
//! Exit codes: 0 success, 2 input/configuration error, 3 degenerate
//! importance weights, 4 sampler failure.

mod io;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbayes_core::Error;

#[derive(Parser)]
#[command(name = "cbayes", version, about = "Conformal Bayesian prediction sets from posterior draws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in adaptive Metropolis sampler and write a draws CSV.
    Sample(SampleArgs),
    /// Conformal prediction sets for test covariates (flat models).
    Conformal(ConformalArgs),
    /// Within-group conformal prediction sets (hierarchical model).
    GroupConformal(GroupConformalArgs),
    /// Bayes central credible intervals / classification sets.
    Bayes(BayesArgs),
    /// Split conformal baseline intervals.
    Split(SplitArgs),
    /// Repeated-simulation coverage benchmark.
    Bench(BenchArgs),
    /// Importance-weight ESS profiles across the outcome grid.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Clone, serde::Serialize)]
pub struct ModelArgs {
    /// Model family.
    #[arg(long, value_parser = ["gaussian", "logistic", "hierarchical"], default_value = "gaussian")]
    pub family: String,
    /// Coefficient prior.
    #[arg(long, value_parser = ["laplace", "normal"], default_value = "laplace")]
    pub coef_prior: String,
    /// Prior sd for the normal coefficient prior.
    #[arg(long, default_value_t = 1.0)]
    pub prior_sd: f64,
    /// Half-normal scale c of the τ prior (regression families).
    #[arg(long, default_value_t = 1.0)]
    pub tau_scale: f64,
    /// Standardize covariates (and the response, for regression) before
    /// fitting; test covariates are transformed with the training record.
    #[arg(long, default_value_t = false)]
    pub standardize: bool,
}

#[derive(Args, Clone, serde::Serialize)]
pub struct DrawsArgs {
    /// Posterior draws CSV produced externally or by `cbayes sample`.
    #[arg(long, group = "draws_source")]
    pub draws: Option<PathBuf>,
    /// Sample inline with the built-in Metropolis sampler instead.
    #[arg(long, group = "draws_source")]
    pub sample_inline: bool,
    /// Post-burn-in draws (inline sampling).
    #[arg(long, default_value_t = 8000)]
    pub t: usize,
    /// Tuning steps (inline sampling).
    #[arg(long, default_value_t = 4000)]
    pub tune: usize,
    /// RNG seed (inline sampling).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone, serde::Serialize)]
pub struct GridArgs {
    /// Outcome grid: `auto` (data range ± 2 response scales) or `lo,hi,n`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub grid: String,
    /// Grid size used with `--grid auto`.
    #[arg(long, default_value_t = 100)]
    pub n_grid: usize,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training data CSV (x1..xd, y, optional group).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8000)]
    t: usize,
    #[arg(long, default_value_t = 4000)]
    tune: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output draws CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConformalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Test covariates CSV (x1..xd, optional y for coverage evaluation).
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    draws: DrawsArgs,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[command(flatten)]
    grid: GridArgs,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-test-point rank/ESS profiles as `<prefix>.<i>.csv`.
    #[arg(long)]
    dump_rank: Option<PathBuf>,
    /// Worker threads for test points (default: env CBAYES_WORKERS or 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Floor degenerate grid points at rank 1/(n+1) instead of failing.
    #[arg(long, default_value_t = false)]
    floor_degenerate: bool,
}

#[derive(Args)]
struct GroupConformalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Test covariates CSV; must carry the group column.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    draws: DrawsArgs,
    /// Per-group miscoverage policy: `uniform:<alpha>` or
    /// `min-feasible:<multiplier>` (α_j = multiplier/(n_j+1)).
    #[arg(long, default_value = "uniform:0.2")]
    alpha_policy: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_rank: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = false)]
    floor_degenerate: bool,
}

#[derive(Args)]
struct BayesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    draws: DrawsArgs,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Seed for the random half-split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize covariates and response before fitting.
    #[arg(long, default_value_t = false)]
    standardize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario preset (see `--scenario help` for names).
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 8000)]
    t: usize,
    #[arg(long, default_value_t = 4000)]
    tune: usize,
    #[arg(long, default_value_t = 100)]
    n_grid: usize,
    /// Master seed (mandatory: benchmark runs must be reproducible).
    #[arg(long, required = true)]
    seed: u64,
    /// Comma-separated methods: cb,bayes,split.
    #[arg(long, default_value = "cb,bayes")]
    methods: String,
    /// CB coverage convention: nearest grid point or exact rank.
    #[arg(long, value_parser = ["grid", "exact"], default_value = "grid")]
    eval: String,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON report output (text table always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable long format (repeat, method, group, coverage, length).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    draws: DrawsArgs,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Outcome grid: `auto`, `lo,hi,n`, or a single value `y` for one row.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 100)]
    n_grid: usize,
    /// Output prefix; writes `<prefix>.<i>.csv` per test covariate.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_degenerate_weights() {
        3
    } else if err.is_sampler_failure() {
        4
    } else {
        2
    }
}

fn area(err: &Error) -> &'static str {
    match err {
        Error::DataFormat(_) | Error::EmptyDataset | Error::DimensionMismatch { .. } => "data",
        Error::DrawsFormat { .. } | Error::DrawsConstraint { .. } | Error::LayoutMismatch { .. } => "draws",
        Error::DegenerateWeights { .. } | Error::GridTooSmall(_) | Error::InvalidGrid(_)
        | Error::GridKindMismatch | Error::InvalidAlpha(_) => "conformal",
        Error::SamplerInit => "sampler",
        Error::MissingGroup | Error::UnknownGroup { .. } => "hierarchy",
        Error::RepeatFailed { .. } => "bench",
        _ => "config",
    }
}

fn hint(err: &Error) -> Option<&'static str> {
    match err {
        Error::DegenerateWeights { .. } => {
            Some("narrow the grid to the plausible outcome range, raise T, or pass --floor-degenerate")
        }
        Error::DrawsFormat { .. } => Some("headers must match the model's parameter slots, e.g. theta.1..theta.d,theta0,tau[,b]"),
        Error::DrawsConstraint { .. } => Some("scale parameters (tau, b, s, s0) must be strictly positive in every row"),
        Error::MissingGroup => Some("the hierarchical family needs a 1-based `group` column on data and test points"),
        Error::GridKindMismatch => Some("classification uses the fixed {0,1} grid; drop --grid"),
        Error::SamplerInit => Some("check that the data is finite and matches the declared family"),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(args) => run::sample(args),
        Command::Conformal(args) => run::conformal(args),
        Command::GroupConformal(args) => run::group_conformal(args),
        Command::Bayes(args) => run::bayes(args),
        Command::Split(args) => run::split(args),
        Command::Bench(args) => run::bench(args),
        Command::Diagnose(args) => run::diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprint!("cbayes [{}]: {err}", area(&err));
            match hint(&err) {
                Some(h) => eprintln!("\n  hint: {h}"),
                None => eprintln!(),
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

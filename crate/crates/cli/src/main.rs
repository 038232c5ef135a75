//! `mixspec` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mixspec", version, about = "Spectral learning of mixtures of discrete product distributions")]
struct Cli {
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "MIXSPEC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a model plus sampled data and hidden types.
    Gen(GenArgs),
    /// Fit a mixture to a samples file.
    Fit(FitArgs),
    /// Compare a fitted model with the true one.
    Eval(EvalArgs),
    /// Assign samples to components of a model.
    Cluster(ClusterArgs),
    /// Fit at several sample sizes and tabulate the errors.
    Scaling(ScalingArgs),
}

/// Where the true model comes from: a file, or a random draw.
#[derive(Args, Debug, Clone)]
pub struct ModelSource {
    /// Existing model JSON; overrides the random-model flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, required_unless_present = "model")]
    pub n: Option<usize>,
    #[arg(long, required_unless_present = "model")]
    pub ell: Option<usize>,
    #[arg(long, required_unless_present = "model")]
    pub r: Option<usize>,
    /// Target condition number σ₁/σ_r of the second moment.
    #[arg(long)]
    pub cond: Option<f64>,
    /// Weight of the uniform distribution mixed into each column block.
    #[arg(long, default_value_t = 0.1)]
    pub uniform_mix: f64,
    /// Seed for the random model.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    /// Seed for the samples.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for model.json, samples.jsonl and types.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Samples JSONL; not needed with --exact-moments.
    #[arg(required_unless_present = "exact_moments")]
    pub samples: Option<PathBuf>,
    /// Number of components.
    #[arg(long)]
    pub r: usize,
    /// Alphabet size; inferred from the largest label when omitted.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Maximum completion iterations.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Random starts per tensor eigenpair.
    #[arg(long)]
    pub power_restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub eps_w: Option<f64>,
    #[arg(long)]
    pub eps_pi: Option<f64>,
    /// Take moments from this model instead of from samples.
    #[arg(long)]
    pub exact_moments: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    pub timings: bool,
    /// Output directory for report.json and model.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum Method {
    Projected,
    Map,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// True model JSON.
    #[arg(long)]
    pub truth: PathBuf,
    /// Fitted model JSON.
    #[arg(long)]
    pub fitted: PathBuf,
    /// Samples to cluster; requires --types.
    #[arg(long, requires = "types")]
    pub samples: Option<PathBuf>,
    /// Hidden types, one label per line.
    #[arg(long)]
    pub types: Option<PathBuf>,
    /// Precomputed assignment to score instead of clustering --samples.
    #[arg(long, requires = "types", conflicts_with = "samples")]
    pub assignment: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "projected")]
    pub method: Method,
    /// Draws for the Monte Carlo KL estimate when ℓⁿ is too large to enumerate.
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics JSON destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    pub samples: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "projected")]
    pub method: Method,
    /// Labels JSONL destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub sizes: Vec<usize>,
    /// Seed for samples and fits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,
    /// CSV destination; the resolved experiment is written next to it as JSON.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Scaling(a) => commands::scaling(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line driver for prior-data conflict checks.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure (non-finite replicates, root-finding breakdown).

mod commands;
mod params;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            exit: 2,
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            exit: 3,
        }
    }

    /// Core errors from bad configuration surface as exit 2.
    pub fn from_core_config(err: priordiv::Error) -> Self {
        Self::config(err.to_string())
    }
}

impl From<priordiv::Error> for CliError {
    fn from(err: priordiv::Error) -> Self {
        match err {
            priordiv::Error::Numerical(_) => Self::numerical(err.to_string()),
            _ => Self::config(err.to_string()),
        }
    }
}

/// Prior-data conflict checks via prior-to-posterior divergences.
#[derive(Parser)]
#[command(name = "priordiv", version, about)]
struct Cli {
    /// Worker threads for replicate evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Model selection shared by most subcommands.  Parameter precedence:
/// --set overrides --config overrides built-in defaults.
#[derive(Args)]
struct ModelArgs {
    /// Model name: normal-location, binomial, normal-nig, shifted-exp,
    /// beta-binomial-hier, or logistic-re.
    #[arg(long)]
    model: String,

    /// Parameter overrides as key=value pairs, comma separated or
    /// repeated. Highest precedence.
    #[arg(long = "set", value_name = "K=V,...")]
    set: Vec<String>,

    /// Flat JSON object of parameter overrides.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Divergence order: kl, mr, or alpha:<x>.
    #[arg(long, default_value = "kl")]
    order: String,

    /// Prior-predictive replicates for Monte Carlo calibration.
    #[arg(long = "M", default_value_t = 1000)]
    m: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,

    /// Keep per-replicate discrepancies in the report.
    #[arg(long)]
    keep_replicates: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Observations CSV (schema: "y" column, or "unit,y,n").
    #[arg(long)]
    data: PathBuf,

    #[command(flatten)]
    run: RunArgs,

    /// Run the predictive-density comparator check instead.
    #[arg(long)]
    em: bool,

    /// Write the observed variational fit trace as CSV
    /// (iteration,elbo,grad_norm); variational models only.
    #[arg(long, value_name = "FILE")]
    trace_output: Option<PathBuf>,
}

#[derive(Args)]
struct HierCheckArgs {
    #[command(flatten)]
    model: ModelArgs,

    #[arg(long)]
    data: PathBuf,

    /// 1 checks the first block given the second; 2 checks the second
    /// block marginally.
    #[arg(long, default_value_t = 1)]
    level: u8,

    /// Unit id (from the data file) for per-unit checks.
    #[arg(long)]
    unit: Option<usize>,

    /// Check every unit.
    #[arg(long)]
    all_units: bool,

    /// Cross-validated variant: the shared-parameter posterior leaves
    /// out the checked unit.
    #[arg(long)]
    cv: bool,

    /// One-sided variant keyed on the sign of the observed effect.
    #[arg(long)]
    one_sided: bool,

    /// Draws for the inner expectation over shared parameters.
    #[arg(long, default_value_t = 200)]
    inner_draws: usize,

    #[command(flatten)]
    run: RunArgs,

    /// Write the observed variational fit trace as CSV.
    #[arg(long, value_name = "FILE")]
    trace_output: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    /// Predictive ratio n*r/kappa; must exceed 1.
    #[arg(long)]
    nu: f64,

    /// Divergence order: kl, mr, or alpha:<x>.
    #[arg(long, default_value = "kl")]
    order: String,

    /// Number of sweep points.
    #[arg(long, default_value_t = 200)]
    points: usize,

    /// Sweep upper end as a multiple of the discrepancy-minimizing
    /// statistic.
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,

    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Worked example to reproduce (1 through 6).
    example: u8,

    /// Output directory for reports and the comparison manifest.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Directory holding the shipped data fixtures.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,

    /// Override the replicate count (defaults are pinned per example).
    #[arg(long = "M")]
    m: Option<usize>,

    /// Override the pinned seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AsymptoticArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// True parameter value, comma separated for multi-parameter models.
    #[arg(long, value_name = "V1,V2,...")]
    theta_star: String,

    /// Prior draws for the limiting probability.
    #[arg(long, default_value_t = 200_000)]
    draws: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Template dataset; needed by models whose information depends on
    /// the design (group sizes).
    #[arg(long)]
    data: Option<PathBuf>,

    /// 1 selects the hierarchical first-block limit where available.
    #[arg(long)]
    level: Option<u8>,

    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrated divergence check of the full prior.
    Check(CheckArgs),
    /// Hierarchical checks of one prior block at a time.
    HierCheck(HierCheckArgs),
    /// Exact p-value curve for the shifted-exponential model.
    Curve(CurveArgs),
    /// Re-run a worked example end to end and compare to its expected
    /// numbers.
    Reproduce(ReproduceArgs),
    /// Large-sample limiting p-value from prior draws.
    Asymptotic(AsymptoticArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Check(args) => commands::check(args),
        Command::HierCheck(args) => commands::hier_check(args),
        Command::Curve(args) => commands::curve(args),
        Command::Reproduce(args) => commands::reproduce(args),
        Command::Asymptotic(args) => commands::asymptotic(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit)
        }
    }
}

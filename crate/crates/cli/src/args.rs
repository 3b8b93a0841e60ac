//! Command-line surface.

use std::path::PathBuf;

use clap::builder::BoolishValueParser;
use clap::{ArgAction, Args, Parser, Subcommand};
use revealed::{Method, Mode};

#[derive(Debug, Parser)]
#[command(name = "revealed", version)]
#[command(about = "Aggregate forecasts under the Gaussian partial-information model")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the information structure; writes sigma.csv and diagnostics.json.
    #[command(args_override_self = true)]
    Estimate(FitArgs),
    /// Aggregate every event; writes aggregates.csv and diagnostics.json.
    #[command(args_override_self = true)]
    Aggregate(AggregateArgs),
    /// Score each κ candidate by conditional validation; writes kappa_scores.csv.
    #[command(args_override_self = true)]
    ValidateKappa(FitArgs),
    /// Repeated forecaster-subsampling experiment; writes evaluation.csv and evaluation.json.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Draw a synthetic panel; writes panel.csv and the true sigma.csv.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Aggregate(_) => "aggregate",
            Command::ValidateKappa(_) => "validate-kappa",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
        }
    }
}

/// Input, output and reproducibility options shared by the data commands.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// binary or continuous
    #[arg(long)]
    pub mode: Mode,
    /// Long-format CSV: event_id,forecaster_id,forecast[,outcome]
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key = value file; command-line flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long, default_value_t = revealed::estimation::DEFAULT_CENSOR_FLOOR)]
    pub censor_floor: f64,
    #[arg(long, default_value_t = revealed::estimation::DEFAULT_CENSOR_CEILING)]
    pub censor_ceil: f64,
    /// Per-event Winsorization level in percent (continuous mode only)
    #[arg(long)]
    pub winsorize: Option<f64>,
    /// Smallest κ candidate [default: 10]
    #[arg(long)]
    pub kappa_min: Option<f64>,
    /// Largest κ candidate [default: 1000 binary, 10000 continuous]
    #[arg(long)]
    pub kappa_max: Option<f64>,
    /// Number of κ candidates [default: 100 binary, 10 continuous]
    #[arg(long)]
    pub kappa_count: Option<usize>,
    /// Log-spaced κ grid
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_parser = BoolishValueParser::new())]
    pub kappa_log: bool,
    /// Projection stopping rule on the largest squared entry change
    #[arg(long, default_value_t = revealed::projection::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = revealed::projection::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated methods [default: revealed and every baseline for the mode]
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// Use this structure instead of estimating one
    #[arg(long)]
    pub sigma: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated subsample sizes
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000)]
    pub events: usize,
    /// Forecaster groups sharing a common piece of information
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub per_block: usize,
    /// Variance of each group's shared piece
    #[arg(long, default_value_t = 0.25)]
    pub shared: f64,
    /// Variance of each forecaster's private piece
    #[arg(long, default_value_t = 0.04)]
    pub private: f64,
    /// Read the structure from a sigma.csv instead of building blocks
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Binary threshold t; the prior probability is Φ(−t)
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    pub prior_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_variance: f64,
    /// Fraction of cells removed at random
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
}

//! Command-line interface definition.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ecotrans",
    version,
    about = "Estimate voter-transition tables from aggregated election data",
    long_about = "Generate synthetic electoral data with known ground truth, fit \
                  ecological estimators, adjust them to observed margins, diagnose \
                  ecological bias, and score everything against the individual data."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate individual and aggregated CSV data from a scenario.
    Generate(GenerateArgs),
    /// Fit a transition-table estimator to aggregated data.
    Fit(FitArgs),
    /// Adjust an estimated table to every station's observed margins.
    Adjust(AdjustArgs),
    /// Run oracle-mode diagnostics on individual data.
    Diagnose(DiagnoseArgs),
    /// Score a fitted model or estimate against individual truth.
    Evaluate(EvaluateArgs),
    /// Run a scenario end to end and emit a method-comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in scenario: constant, diagonal-covariate, mixture, fig1a,
    /// fig1b, fig2a, fig2b.
    #[arg(long, conflicts_with = "spec")]
    pub scenario: Option<String>,
    /// Generator spec as a JSON file (see the README for the schema).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of polling stations (randomized scenarios only).
    #[arg(long, default_value_t = 2000)]
    pub n_units: usize,
    /// Master seed; with --spec this overrides the seed in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: out/<run-id>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Linear ecological regression.
    Goodman,
    /// Softmax model by ordinary least squares.
    KingOls,
    /// Softmax model by working-covariance least squares.
    BpWls,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Goodman => "goodman",
            Method::KingOls => "king-ols",
            Method::BpWls => "bp-wls",
        })
    }
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// Treat every station equally instead of weighting by size.
    #[arg(long)]
    pub no_size_weights: bool,
    /// Gradient tolerance of the optimizer.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Iteration cap per optimizer run.
    #[arg(long, default_value_t = 400)]
    pub max_iter: usize,
    /// Number of optimizer starts.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Seed for the optimizer's restart jitter.
    #[arg(long, default_value_t = 0)]
    pub opt_seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Aggregated-data CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Covariate design JSON (logit methods; default: no covariates).
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[command(flatten)]
    pub opts: FitOptions,
    /// Also emit the estimate adjusted to every station's margins.
    #[arg(long)]
    pub adjust_margins: bool,
    /// Floor applied to zero cells before margin adjustment.
    #[arg(long, default_value_t = 1e-4)]
    pub floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    /// Estimated table as headerless CSV.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Aggregated-data CSV with the target margins.
    #[arg(long)]
    pub data: PathBuf,
    /// Margin tolerance in absolute counts.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Floor applied to zero cells of the estimate.
    #[arg(long, default_value_t = 1e-4)]
    pub floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Individual-data CSV (diagnostics run in oracle mode).
    #[arg(long)]
    pub data: PathBuf,
    /// Correlations between within-unit proportions and margins.
    #[arg(long)]
    pub bias_corr: bool,
    /// Quantile profile grouped by this margin row (accepts `1` or `row=1`).
    #[arg(long)]
    pub profile: Option<String>,
    /// Number of quantile groups for --profile.
    #[arg(long, default_value_t = 20)]
    pub groups: usize,
    /// Tracked column for --profile (default: last column).
    #[arg(long)]
    pub col: Option<usize>,
    /// 2x2 line-geometry export.
    #[arg(long)]
    pub geometry: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fitted model JSON (from `fit`).
    #[arg(long, conflicts_with = "estimate")]
    pub model: Option<PathBuf>,
    /// Constant estimate as headerless CSV.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Aggregated-data CSV the model is reconstructed on.
    #[arg(long)]
    pub data: PathBuf,
    /// Individual-data CSV holding the truth.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Built-in scenario name.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 2000)]
    pub n_units: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: FitOptions,
    /// Also report margin-adjusted variants of every estimate.
    #[arg(long)]
    pub adjust_margins: bool,
    /// Floor applied to zero cells before margin adjustment.
    #[arg(long, default_value_t = 1e-4)]
    pub floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

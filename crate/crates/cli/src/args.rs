use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::fit::{BandwidthChoice, KernelArg, LambdaChoice, Method};
use crate::io::ConfounderReduce;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "jne", version, about = "Precision-matrix estimation under a scalar confounder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic confounded dataset and its target matrix.
    Generate(GenerateArgs),
    /// Fit an estimator and write omega0.csv and diagnostics.json.
    Estimate(EstimateArgs),
    /// Held-out Gaussian log-likelihood on a train/test split.
    Evaluate(EvaluateArgs),
    /// Leave-one-out bandwidth selection.
    Bandwidth(BandwidthArgs),
    /// Synthetic benchmark over methods, lambda values and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Confounder column names, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "g")]
    pub confounder_cols: Vec<String>,
    #[arg(long, value_enum, default_value_t = ConfounderReduce::SingleColumn)]
    pub confounder_reduce: ConfounderReduce,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    /// Fixed bandwidth; skips cross-validation.
    #[arg(long, conflicts_with = "bandwidth_grid")]
    pub bandwidth: Option<f64>,
    /// Candidate bandwidths for cross-validation, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bandwidth_grid: Option<Vec<f64>>,
    /// Select a bandwidth for every matrix entry.
    #[arg(long)]
    pub per_entry: bool,
    /// Subtract the local mean from local second moments.
    #[arg(long)]
    pub center: bool,
}

impl KernelArgs {
    pub fn choice(&self) -> BandwidthChoice {
        match self.bandwidth {
            Some(h) => BandwidthChoice::Fixed(h),
            None => BandwidthChoice::Cv {
                grid: self.bandwidth_grid.clone(),
                per_entry: self.per_entry,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LambdaArgs {
    /// Regularization level (default 0.078).
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Values compared by AIC, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Double lambda until every column program is feasible.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub auto_lambda: bool,
}

impl LambdaArgs {
    pub fn choice(&self) -> CliResult<LambdaChoice> {
        let start = self.lambda.unwrap_or(jne_core::jne::JneConfig::default().lambda);
        if !(start.is_finite() && start >= 0.0) {
            return Err(CliError::Config(format!("lambda must be nonnegative, got {start}")));
        }
        Ok(match (&self.lambda_grid, self.auto_lambda) {
            (Some(grid), _) => LambdaChoice::Aic(grid.clone()),
            (None, true) => LambdaChoice::Auto(start),
            (None, false) => LambdaChoice::Fixed(start),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub samples_per_matrix: usize,
    #[arg(long, default_value_t = 0.2)]
    pub nonzero_prob: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold_fraction: f64,
    /// Evaluate the path on this many equally spaced confounder values.
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Jne)]
    pub method: Method,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Also write the per-observation nuisance matrices (jne only).
    #[arg(long)]
    pub write_nuisance: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Jne)]
    pub method: Method,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    /// Shuffle before splitting; without it the first rows train.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score this matrix on the test part instead of fitting one.
    #[arg(long)]
    pub omega: Option<PathBuf>,
    /// Reference matrix for squared error and support recovery.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BandwidthArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Methods to compare; `oracle` reports the target itself.
    #[arg(long, value_delimiter = ',', default_value = "jne,ke-clime,re-clime")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.039,0.078,0.117,0.156")]
    pub lambda_grid: Vec<f64>,
    /// Variable counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub p: Vec<usize>,
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Fit on this fraction and report held-out log-likelihood on the rest.
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

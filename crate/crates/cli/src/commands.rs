//! `generate`, `estimate`, `evaluate` and `bandwidth`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use jne_core::eval::{gaussian_loglik, split_indices, support_metrics, AicScore, SplitMode, SplitSpec, SupportMetrics, DEFAULT_PD_FLOOR};
use jne_core::kernel::{loo_scores, Bandwidth, Kernel, KernelConfig};
use jne_core::synth::{sample_instance, squared_error, SynthConfig};
use jne_core::{Dataset, SquareMatrix};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{BandwidthArgs, EstimateArgs, EvaluateArgs, GenerateArgs, KernelArgs};
use crate::error::{CliError, CliResult};
use crate::fit::{fit_with_lambda, ZERO_TOL, resolve_bandwidth, FitContext, FitDetails, KernelArg, Method};
use crate::io::{ingest_csv, read_matrix_csv, write_dataset_csv, write_json, write_matrix_csv, ConfounderReduce};

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn check_threads(threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BandwidthReport {
    pub kernel: KernelArg,
    pub center: bool,
    pub candidates: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_entry: Option<Vec<Vec<f64>>>,
}

fn matrix_rows(m: &SquareMatrix) -> Vec<Vec<f64>> {
    (0..m.order()).map(|i| (0..m.order()).map(|j| m[(i, j)]).collect()).collect()
}

/// Kernel configuration for `dataset`, running cross-validation if needed.
pub fn kernel_config(dataset: &Dataset, args: &KernelArgs) -> CliResult<(KernelConfig, BandwidthReport)> {
    let kernel: Kernel = args.kernel.into();
    let (bandwidth, candidates) = resolve_bandwidth(dataset, &args.choice(), kernel)?;
    let report = BandwidthReport {
        kernel: args.kernel,
        center: args.center,
        candidates,
        scalar: match &bandwidth {
            Bandwidth::Scalar(h) => Some(*h),
            Bandwidth::PerEntry(_) => None,
        },
        per_entry: match &bandwidth {
            Bandwidth::Scalar(_) => None,
            Bandwidth::PerEntry(m) => Some(matrix_rows(m)),
        },
    };
    Ok((KernelConfig::new(kernel, bandwidth, args.center)?, report))
}

#[derive(Debug, Serialize)]
struct Timings {
    kernel_seconds: f64,
    solve_seconds: f64,
    total_seconds: f64,
}

#[derive(Debug, Serialize)]
struct EstimateDiagnostics {
    method: Method,
    n: usize,
    p: usize,
    lambda: f64,
    lambda_attempts: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aic: Option<Vec<AicScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<BandwidthReport>,
    confounder_reduce: ConfounderReduce,
    #[serde(flatten)]
    details: FitDetails,
    timings: Timings,
}

pub fn run_generate(args: &GenerateArgs) -> CliResult<()> {
    let config = SynthConfig {
        p: args.p,
        samples_per_matrix: args.samples_per_matrix,
        nonzero_prob: args.nonzero_prob,
        threshold_fraction: args.threshold_fraction,
        grid_points: args.grid_points,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let inst = sample_instance(&config)?;
    ensure_dir(&args.output_dir)?;
    write_dataset_csv(&args.output_dir.join("data.csv"), &inst.dataset)?;
    let names: Vec<String> = (1..=args.p).map(|j| format!("z{j}")).collect();
    write_matrix_csv(&args.output_dir.join("target.csv"), &inst.target, &names)?;
    write_json(&args.output_dir.join("generator.json"), &config)
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<()> {
    check_threads(args.threads)?;
    let lambda = args.lambda.choice()?;
    let start = Instant::now();
    let data = ingest_csv(&args.input.input, &args.input.confounder_cols, args.input.confounder_reduce)?;
    let (kernel, report) = if args.method.uses_kernel() {
        let (k, r) = kernel_config(&data.dataset, &args.kernel)?;
        (Some(k), Some(r))
    } else {
        (None, None)
    };
    let ctx = FitContext::new(args.method, &data.dataset, data.confounders.clone(), kernel, args.threads)?;
    let kernel_seconds = start.elapsed().as_secs_f64();
    let solve_start = Instant::now();
    let selected = fit_with_lambda(args.method, &ctx, &lambda)?;
    let solve_seconds = solve_start.elapsed().as_secs_f64();

    ensure_dir(&args.output_dir)?;
    write_matrix_csv(&args.output_dir.join("omega0.csv"), &selected.fit.omega0, &data.variables)?;
    if args.write_nuisance {
        if let Some(nuisance) = &selected.fit.nuisance {
            let dir = args.output_dir.join("nuisance");
            ensure_dir(&dir)?;
            let width = nuisance.len().to_string().len();
            for (i, r) in nuisance.iter().enumerate() {
                write_matrix_csv(&dir.join(format!("r_{i:0width$}.csv")), r, &data.variables)?;
            }
        }
    }
    let diagnostics = EstimateDiagnostics {
        method: args.method,
        n: data.dataset.n(),
        p: data.dataset.p(),
        lambda: selected.lambda,
        lambda_attempts: selected.attempts,
        aic: selected.aic,
        bandwidth: report,
        confounder_reduce: args.input.confounder_reduce,
        details: selected.fit.details,
        timings: Timings {
            kernel_seconds,
            solve_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    };
    write_json(&args.output_dir.join("diagnostics.json"), &diagnostics)
}

#[derive(Debug, Serialize)]
struct Evaluation {
    method: Option<Method>,
    n_train: usize,
    n_test: usize,
    lambda: Option<f64>,
    heldout_loglik: f64,
    /// Mean log-likelihood per test observation.
    heldout_loglik_per_obs: f64,
    pd_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    squared_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support: Option<SupportMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<BandwidthReport>,
}

pub fn run_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    check_threads(args.threads)?;
    let data = ingest_csv(&args.input.input, &args.input.confounder_cols, args.input.confounder_reduce)?;
    let spec = SplitSpec {
        train_fraction: args.train_frac,
        mode: args.seed.map_or(SplitMode::Contiguous, SplitMode::Shuffled),
    };
    let (train_idx, test_idx) = split_indices(data.dataset.n(), &spec)?;
    let train = data.dataset.select(&train_idx)?;
    let test = data.dataset.select(&test_idx)?;

    let (omega, method, lambda, bandwidth) = match &args.omega {
        Some(path) => (read_matrix_csv(path)?, None, None, None),
        None => {
            let lambda = args.lambda.choice()?;
            let (kernel, report) = if args.method.uses_kernel() {
                let (k, r) = kernel_config(&train, &args.kernel)?;
                (Some(k), Some(r))
            } else {
                (None, None)
            };
            let conf = data.confounders.select_rows(&train_idx);
            let ctx = FitContext::new(args.method, &train, conf, kernel, args.threads)?;
            let selected = fit_with_lambda(args.method, &ctx, &lambda)?;
            (selected.fit.omega0, Some(args.method), Some(selected.lambda), report)
        }
    };
    if omega.order() != test.p() {
        return Err(CliError::Core(jne_core::Error::DimensionMismatch(format!(
            "matrix of order {} for {} variables",
            omega.order(),
            test.p()
        ))));
    }
    let heldout = gaussian_loglik(&test, &omega, DEFAULT_PD_FLOOR)?;
    let (squared, support) = match &args.target {
        Some(path) => {
            let target = read_matrix_csv(path)?;
            (
                Some(squared_error(&omega, &target)?),
                Some(support_metrics(&omega, &target, ZERO_TOL)?),
            )
        }
        None => (None, None),
    };
    ensure_dir(&args.output_dir)?;
    write_matrix_csv(&args.output_dir.join("omega0.csv"), &omega, &data.variables)?;
    let report = Evaluation {
        method,
        n_train: train.n(),
        n_test: test.n(),
        lambda,
        heldout_loglik: heldout,
        heldout_loglik_per_obs: heldout / test.n() as f64,
        pd_floor: DEFAULT_PD_FLOOR,
        squared_error: squared,
        support,
        bandwidth,
    };
    write_json(&args.output_dir.join("evaluation.json"), &report)
}

#[derive(Debug, Serialize)]
struct BandwidthScores {
    candidates: Vec<f64>,
    /// Leave-one-out score summed over the upper triangle, per candidate;
    /// null when some held-out window is empty.
    total_scores: Vec<Option<f64>>,
    selected: BandwidthReport,
}

pub fn run_bandwidth(args: &BandwidthArgs) -> CliResult<()> {
    let data = ingest_csv(&args.input.input, &args.input.confounder_cols, args.input.confounder_reduce)?;
    let (config, report) = kernel_config(&data.dataset, &args.kernel)?;
    let p = data.dataset.p();
    let totals = report
        .candidates
        .iter()
        .map(|&h| {
            loo_scores(&data.dataset, config.kernel, h)
                .map(|s| (0..p).flat_map(|j| (j..p).map(move |k| (j, k))).map(|(j, k)| s[(j, k)]).sum())
        })
        .collect();
    let matrix = SquareMatrix::new(DMatrix::from_fn(p, p, |j, k| config.bandwidth.at(j, k)))?;
    ensure_dir(&args.output_dir)?;
    write_matrix_csv(&args.output_dir.join("bandwidth.csv"), &matrix, &data.variables)?;
    write_json(
        &args.output_dir.join("bandwidth.json"),
        &BandwidthScores {
            candidates: report.candidates.clone(),
            total_scores: totals,
            selected: report,
        },
    )
}

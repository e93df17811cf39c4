//! Synthetic benchmark: every method at every lambda for every seed, with
//! AIC selection per method and per-method medians.

use std::cell::RefCell;

use clap::ValueEnum;
use jne_core::eval::{gaussian_loglik, select_by_aic, split_indices, SplitMode, SplitSpec, DEFAULT_PD_FLOOR};
use jne_core::kernel::select_bandwidth_cv;
use jne_core::synth::{median, sample_instance, squared_error, SynthConfig};
use jne_core::{Dataset, Error, SquareMatrix};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::SweepArgs;
use crate::commands::{check_threads, ensure_dir, kernel_config};
use crate::error::{CliError, CliResult};
use crate::fit::{fit_at, FitContext, Method, ZERO_TOL};
use crate::io::{format_value, write_json, write_rows_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMethod {
    /// Reports the target itself.
    Oracle,
    Estimator(Method),
}

impl SweepMethod {
    pub fn parse(name: &str) -> CliResult<Self> {
        if name.eq_ignore_ascii_case("oracle") {
            return Ok(SweepMethod::Oracle);
        }
        Method::from_str(name, true)
            .map(SweepMethod::Estimator)
            .map_err(|_| CliError::Config(format!("unknown method {name:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::Oracle => "oracle",
            SweepMethod::Estimator(m) => m.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub p: usize,
    pub seed: u64,
    pub method: &'static str,
    pub lambda: Option<f64>,
    /// Chosen by AIC among this method's grid values.
    pub selected: bool,
    pub feasible: bool,
    pub squared_error: Option<f64>,
    pub aic: Option<f64>,
    pub heldout_loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub p: usize,
    pub method: &'static str,
    pub runs: usize,
    pub median_squared_error: f64,
    pub median_heldout_loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthRow {
    pub p: usize,
    pub seed: u64,
    pub j: usize,
    pub k: usize,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub bandwidths: Vec<BandwidthRow>,
}

struct Scored {
    lambda: f64,
    omega: Option<SquareMatrix>,
    aic: Option<f64>,
}

fn run_one(args: &SweepArgs, methods: &[SweepMethod], p: usize, seed: u64) -> CliResult<(Vec<RunRow>, Vec<BandwidthRow>)> {
    let inst = sample_instance(&SynthConfig {
        p,
        seed,
        ..SynthConfig::default()
    })?;
    let full = &inst.dataset;
    let (train, test): (Dataset, Option<Dataset>) = match args.train_frac {
        Some(frac) => {
            let spec = SplitSpec {
                train_fraction: frac,
                mode: SplitMode::Shuffled(seed),
            };
            let (tr, te) = split_indices(full.n(), &spec)?;
            (full.select(&tr)?, Some(full.select(&te)?))
        }
        None => (full.clone(), None),
    };
    let (kernel, report) = kernel_config(&train, &args.kernel)?;
    let per_entry = select_bandwidth_cv(&train, &report.candidates, true, kernel.kernel)?;
    let mut bandwidths = Vec::new();
    for j in 0..p {
        for k in j..p {
            bandwidths.push(BandwidthRow {
                p,
                seed,
                j,
                k,
                bandwidth: per_entry.at(j, k),
            });
        }
    }

    let heldout = |omega: &SquareMatrix| -> CliResult<Option<f64>> {
        test.as_ref()
            .map(|t| gaussian_loglik(t, omega, DEFAULT_PD_FLOOR))
            .transpose()
            .map_err(CliError::from)
    };
    let confounders = DMatrix::from_column_slice(train.n(), 1, train.confounders());
    let mut rows = Vec::new();
    for &method in methods {
        let est = match method {
            SweepMethod::Oracle => {
                rows.push(RunRow {
                    p,
                    seed,
                    method: method.name(),
                    lambda: None,
                    selected: true,
                    feasible: true,
                    squared_error: Some(0.0),
                    aic: None,
                    heldout_loglik: heldout(&inst.target)?,
                });
                continue;
            }
            SweepMethod::Estimator(m) => m,
        };
        let kernel = est.uses_kernel().then(|| kernel.clone());
        let ctx = FitContext::new(est, &train, confounders.clone(), kernel, 1)?;
        let scored: RefCell<Vec<Scored>> = RefCell::new(Vec::new());
        let chosen = select_by_aic(&args.lambda_grid, &train, ZERO_TOL, |lambda| {
            let res = fit_at(est, &ctx, lambda).map(|f| f.omega0);
            scored.borrow_mut().push(Scored {
                lambda,
                omega: res.as_ref().ok().cloned(),
                aic: None,
            });
            res.map(|o| ((), o))
        });
        let chosen_lambda = match chosen {
            Ok((lambda, (), scores)) => {
                for s in scored.borrow_mut().iter_mut() {
                    s.aic = scores.iter().find(|a| a.lambda == s.lambda).and_then(|a| a.aic);
                }
                Some(lambda)
            }
            Err(Error::AllInfeasible) => None,
            Err(e) => return Err(e.into()),
        };
        let mut scored = scored.into_inner();
        scored.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        for s in scored {
            let (squared, ll) = match &s.omega {
                Some(o) => (Some(squared_error(o, &inst.target)?), heldout(o)?),
                None => (None, None),
            };
            rows.push(RunRow {
                p,
                seed,
                method: method.name(),
                lambda: Some(s.lambda),
                selected: chosen_lambda == Some(s.lambda),
                feasible: s.omega.is_some(),
                squared_error: squared,
                aic: s.aic,
                heldout_loglik: ll,
            });
        }
    }
    Ok((rows, bandwidths))
}

/// Runs the benchmark on `args.threads` workers; rows come back in
/// `(p, seed)` order regardless of scheduling.
pub fn sweep(args: &SweepArgs) -> CliResult<SweepResult> {
    check_threads(args.threads)?;
    if args.lambda_grid.is_empty() || args.p.is_empty() || args.seeds == 0 {
        return Err(CliError::Config("lambda grid, p list and seed count must be nonempty".into()));
    }
    let methods = args
        .methods
        .iter()
        .map(|m| SweepMethod::parse(m))
        .collect::<CliResult<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = args
        .p
        .iter()
        .flat_map(|&p| (args.seed..args.seed + args.seeds).map(move |s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<CliResult<(Vec<RunRow>, Vec<BandwidthRow>)>> =
        pool.install(|| jobs.par_iter().map(|&(p, s)| run_one(args, &methods, p, s)).collect());

    let mut runs = Vec::new();
    let mut bandwidths = Vec::new();
    for r in results {
        let (rows, bw) = r?;
        runs.extend(rows);
        bandwidths.extend(bw);
    }
    let mut summary = Vec::new();
    for &p in &args.p {
        for &m in &methods {
            let chosen: Vec<&RunRow> = runs
                .iter()
                .filter(|r| r.p == p && r.method == m.name() && r.selected)
                .collect();
            let errors: Vec<f64> = chosen.iter().filter_map(|r| r.squared_error).collect();
            let lls: Vec<f64> = chosen.iter().filter_map(|r| r.heldout_loglik).collect();
            summary.push(SummaryRow {
                p,
                method: m.name(),
                runs: chosen.len(),
                median_squared_error: median(&errors),
                median_heldout_loglik: (!lls.is_empty()).then(|| median(&lls)),
            });
        }
    }
    Ok(SweepResult {
        runs,
        summary,
        bandwidths,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

pub fn run_sweep(args: &SweepArgs) -> CliResult<()> {
    let result = sweep(args)?;
    ensure_dir(&args.output_dir)?;
    let dir = &args.output_dir;
    write_rows_csv(
        &dir.join("runs.csv"),
        &["p", "seed", "method", "lambda", "selected", "feasible", "squared_error", "aic", "heldout_loglik"],
        result
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.p.to_string(),
                    r.seed.to_string(),
                    r.method.to_string(),
                    opt(r.lambda),
                    r.selected.to_string(),
                    r.feasible.to_string(),
                    opt(r.squared_error),
                    opt(r.aic),
                    opt(r.heldout_loglik),
                ]
            })
            .collect(),
    )?;
    write_rows_csv(
        &dir.join("summary.csv"),
        &["p", "method", "runs", "median_squared_error", "median_heldout_loglik"],
        result
            .summary
            .iter()
            .map(|s| {
                vec![
                    s.p.to_string(),
                    s.method.to_string(),
                    s.runs.to_string(),
                    format_value(s.median_squared_error),
                    opt(s.median_heldout_loglik),
                ]
            })
            .collect(),
    )?;
    write_rows_csv(
        &dir.join("bandwidths.csv"),
        &["p", "seed", "j", "k", "bandwidth"],
        result
            .bandwidths
            .iter()
            .map(|b| vec![b.p.to_string(), b.seed.to_string(), b.j.to_string(), b.k.to_string(), format_value(b.bandwidth)])
            .collect(),
    )?;
    write_json(&dir.join("summary.json"), &result.summary)
}

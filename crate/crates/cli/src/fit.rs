//! Estimator dispatch shared by the commands.

use clap::ValueEnum;
use jne_core::baselines::{clime_with, ke_clime_with, re_clime_multi};
use jne_core::eval::{select_by_aic, AicScore};
use jne_core::jne::{solve_jne, ColumnDiagnostics, JneConfig};
use jne_core::kernel::{
    all_local_covariances, bandwidth_grid, select_bandwidth_cv, Bandwidth, Kernel, KernelConfig,
    LocalCovariances,
};
use jne_core::{Dataset, Error, Result, SquareMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Multiples of the rule-of-thumb bandwidth searched when no grid is given.
pub const DEFAULT_BANDWIDTH_FACTORS: [f64; 7] = [0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0];

/// Regularization values used in the synthetic experiments.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.039, 0.078, 0.117, 0.156];

/// Entries at or below this magnitude count as zero.
pub const ZERO_TOL: f64 = 1e-8;

/// Doublings tried by the automatic lambda search before giving up.
pub const AUTO_LAMBDA_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Jne,
    Clime,
    KeClime,
    ReClime,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Jne => "jne",
            Method::Clime => "clime",
            Method::KeClime => "ke-clime",
            Method::ReClime => "re-clime",
        }
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, Method::Jne | Method::KeClime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    #[default]
    Epanechnikov,
    Triangular,
    Uniform,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Kernel {
        match k {
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
            KernelArg::Triangular => Kernel::Triangular,
            KernelArg::Uniform => Kernel::Uniform,
        }
    }
}

/// How the bandwidth is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthChoice {
    Fixed(f64),
    /// Leave-one-out selection over absolute candidates; `None` uses
    /// [`DEFAULT_BANDWIDTH_FACTORS`] times the rule of thumb.
    Cv { grid: Option<Vec<f64>>, per_entry: bool },
}

pub fn resolve_bandwidth(dataset: &Dataset, choice: &BandwidthChoice, kernel: Kernel) -> Result<(Bandwidth, Vec<f64>)> {
    match choice {
        BandwidthChoice::Fixed(h) => Ok((Bandwidth::Scalar(*h), vec![*h])),
        BandwidthChoice::Cv { grid, per_entry } => {
            let grid = grid
                .clone()
                .unwrap_or_else(|| bandwidth_grid(dataset.confounders(), &DEFAULT_BANDWIDTH_FACTORS));
            Ok((select_bandwidth_cv(dataset, &grid, *per_entry, kernel)?, grid))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// Start here and double until every column is feasible.
    Auto(f64),
    /// Fit every value and keep the AIC minimizer.
    Aic(Vec<f64>),
}

/// Everything an estimator may need besides lambda.
pub struct FitContext<'a> {
    pub dataset: &'a Dataset,
    /// Raw confounder columns used by the regression baseline.
    pub confounders: DMatrix<f64>,
    pub covs: Option<LocalCovariances>,
    pub center: bool,
    pub threads: usize,
    pub tol: f64,
}

impl<'a> FitContext<'a> {
    pub fn new(
        method: Method,
        dataset: &'a Dataset,
        confounders: DMatrix<f64>,
        kernel: Option<KernelConfig>,
        threads: usize,
    ) -> Result<Self> {
        let center = kernel.as_ref().map_or(false, |k| k.center);
        let covs = match (method.uses_kernel(), kernel) {
            (true, Some(k)) => Some(all_local_covariances(dataset, &k)?),
            (true, None) => return Err(Error::InvalidConfig("kernel settings are required".into())),
            (false, _) => None,
        };
        Ok(FitContext {
            dataset,
            confounders,
            covs,
            center,
            threads,
            tol: ZERO_TOL,
        })
    }

    fn config(&self, lambda: f64) -> JneConfig {
        JneConfig {
            lambda,
            tol: self.tol,
            column_parallelism: self.threads,
        }
    }

    fn pooled(&self) -> SquareMatrix {
        let s = self.dataset.second_moment();
        if !self.center {
            return s;
        }
        let n = self.dataset.n() as f64;
        let mean = self.dataset.samples().row_sum().transpose() / n;
        SquareMatrix::new(s.as_matrix() - &mean * mean.transpose()).unwrap_or(s)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FitDetails {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<ColumnDiagnostics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_nuisance_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub omega0: SquareMatrix,
    pub nuisance: Option<Vec<SquareMatrix>>,
    pub details: FitDetails,
}

pub fn fit_at(method: Method, ctx: &FitContext, lambda: f64) -> Result<Fit> {
    let config = ctx.config(lambda);
    let covs = || ctx.covs.as_ref().ok_or_else(|| Error::InvalidConfig("local covariances missing".into()));
    match method {
        Method::Jne => {
            let sol = solve_jne(covs()?, &config)?;
            Ok(Fit {
                details: FitDetails {
                    columns: Some(sol.columns.clone()),
                    max_residual: Some(sol.max_residual),
                    max_nuisance_sum: Some(sol.max_nuisance_sum),
                    blocks: Some(sol.blocks),
                },
                omega0: sol.omega0,
                nuisance: Some(sol.nuisance),
            })
        }
        Method::Clime => Ok(Fit {
            omega0: clime_with(&ctx.pooled(), &config)?,
            nuisance: None,
            details: FitDetails::default(),
        }),
        Method::KeClime => Ok(Fit {
            omega0: ke_clime_with(covs()?, &config)?.omega0,
            nuisance: None,
            details: FitDetails::default(),
        }),
        Method::ReClime => Ok(Fit {
            omega0: re_clime_multi(ctx.dataset.samples(), &ctx.confounders, &config)?.omega0,
            nuisance: None,
            details: FitDetails::default(),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Selected {
    pub lambda: f64,
    pub fit: Fit,
    /// Values tried by the automatic search, in order.
    pub attempts: Vec<f64>,
    pub aic: Option<Vec<AicScore>>,
}

pub fn fit_with_lambda(method: Method, ctx: &FitContext, choice: &LambdaChoice) -> Result<Selected> {
    match choice {
        LambdaChoice::Fixed(lambda) => Ok(Selected {
            lambda: *lambda,
            fit: fit_at(method, ctx, *lambda)?,
            attempts: vec![*lambda],
            aic: None,
        }),
        LambdaChoice::Auto(start) => {
            if !(start.is_finite() && *start > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "automatic lambda search needs a positive start, got {start}"
                )));
            }
            let mut lambda = *start;
            let mut attempts = Vec::new();
            for _ in 0..AUTO_LAMBDA_STEPS {
                attempts.push(lambda);
                match fit_at(method, ctx, lambda) {
                    Ok(fit) => {
                        return Ok(Selected {
                            lambda,
                            fit,
                            attempts,
                            aic: None,
                        })
                    }
                    Err(Error::InfeasibleColumn { .. }) => lambda *= 2.0,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::AllInfeasible)
        }
        LambdaChoice::Aic(grid) => {
            let (lambda, fit, scores) = select_by_aic(grid, ctx.dataset, ctx.tol, |l| {
                fit_at(method, ctx, l).map(|f| {
                    let omega = f.omega0.clone();
                    (f, omega)
                })
            })?;
            Ok(Selected {
                lambda,
                fit,
                attempts: grid.clone(),
                aic: Some(scores),
            })
        }
    }
}

//! Comparison estimators: CLIME on a single covariance, Ke-CLIME (CLIME on
//! every kernel-local covariance, then averaged) and Re-CLIME (CLIME on the
//! covariance of residuals after regressing out the confounder).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SquareMatrix};
use crate::error::{Error, Result};
use crate::jne::{group_identical, solve_jne, thread_pool, JneConfig};
use crate::kernel::LocalCovariances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Clime,
    KeClime,
    ReClime,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub omega0: SquareMatrix,
    pub method: Method,
    /// Per-sample estimates, Ke-CLIME only.
    pub per_sample: Option<Vec<SquareMatrix>>,
}

/// Column-wise `min |β|₁ s.t. |Sβ − e_j|_∞ ≤ λ`, symmetrized.
pub fn clime(s: &SquareMatrix, lambda: f64) -> Result<SquareMatrix> {
    clime_with(s, &JneConfig::with_lambda(lambda))
}

pub fn clime_with(s: &SquareMatrix, config: &JneConfig) -> Result<SquareMatrix> {
    let covs = LocalCovariances::single(s.clone())?;
    Ok(solve_jne(&covs, config)?.omega0)
}

pub fn ke_clime(covs: &LocalCovariances, lambda: f64) -> Result<BaselineResult> {
    ke_clime_with(covs, &JneConfig::with_lambda(lambda))
}

/// Samples with identical local covariances share one solve. Solves run on
/// `config.column_parallelism` threads.
pub fn ke_clime_with(covs: &LocalCovariances, config: &JneConfig) -> Result<BaselineResult> {
    config.validate()?;
    let blocks = group_identical(covs);
    let inner = JneConfig {
        column_parallelism: 1,
        ..config.clone()
    };
    let pool = thread_pool(config.column_parallelism)?;
    let solved: Vec<Result<SquareMatrix>> = pool.install(|| {
        blocks
            .representative
            .par_iter()
            .map(|&i| {
                clime_with(&covs.matrices()[i], &inner).map_err(|e| match e {
                    Error::InfeasibleColumn {
                        column,
                        lambda,
                        violation,
                        ..
                    } => Error::InfeasibleColumn {
                        column,
                        lambda,
                        violation,
                        sample: Some(i),
                    },
                    other => other,
                })
            })
            .collect()
    });
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;

    let p = covs.order();
    let mut total = DMatrix::zeros(p, p);
    for (omega, &w) in solved.iter().zip(&blocks.weight) {
        total += omega.as_matrix() * w;
    }
    total /= covs.len() as f64;
    let per_sample = blocks.of_sample.iter().map(|&b| solved[b].clone()).collect();
    Ok(BaselineResult {
        omega0: SquareMatrix::from_unchecked(total),
        method: Method::KeClime,
        per_sample: Some(per_sample),
    })
}

/// Least-squares residuals of every column of `y` on `design`. Fails when
/// the design is rank deficient.
pub fn regress_out(y: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.nrows() != design.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} responses against {} design rows",
            y.nrows(),
            design.nrows()
        )));
    }
    if design.nrows() < design.ncols() {
        return Err(Error::DegenerateRegression);
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = design.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let rank_tol = 1e-10 * scale * (design.nrows() as f64).sqrt();
    if r.diagonal().iter().any(|d| d.abs() <= rank_tol) {
        return Err(Error::DegenerateRegression);
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Ok(y - fitted)
}

/// Intercept plus one column per confounder.
pub fn design_with_intercept(confounders: &DMatrix<f64>) -> DMatrix<f64> {
    let mut design = DMatrix::from_element(confounders.nrows(), confounders.ncols() + 1, 1.0);
    design.columns_mut(1, confounders.ncols()).copy_from(confounders);
    design
}

pub fn re_clime(dataset: &Dataset, lambda: f64) -> Result<BaselineResult> {
    re_clime_with(dataset, &JneConfig::with_lambda(lambda))
}

pub fn re_clime_with(dataset: &Dataset, config: &JneConfig) -> Result<BaselineResult> {
    let g = DMatrix::from_column_slice(dataset.n(), 1, dataset.confounders());
    re_clime_multi(dataset.samples(), &g, config)
}

/// Re-CLIME with several confounders (one per column of `confounders`).
pub fn re_clime_multi(
    samples: &DMatrix<f64>,
    confounders: &DMatrix<f64>,
    config: &JneConfig,
) -> Result<BaselineResult> {
    config.validate()?;
    if samples.nrows() < 3 {
        return Err(Error::TooFewSamples(samples.nrows()));
    }
    let residuals = regress_out(samples, &design_with_intercept(confounders))?;
    let mut s = residuals.transpose() * &residuals;
    s /= samples.nrows() as f64;
    let s = SquareMatrix::from_unchecked((&s + s.transpose()) * 0.5);
    Ok(BaselineResult {
        omega0: clime_with(&s, config)?,
        method: Method::ReClime,
        per_sample: None,
    })
}

//! Held-out scoring: train/test splits, projection onto the positive
//! definite cone, Gaussian log-likelihood, AIC and support recovery.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SquareMatrix};
use crate::error::{Error, Result};

/// Eigenvalue floor used when an estimate has to be made positive definite.
pub const DEFAULT_PD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// First part trains, the rest tests; observation order is kept.
    Contiguous,
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            mode: SplitMode::Contiguous,
        }
    }
}

/// Training and test row indices for `n` observations:
/// `floor(train_fraction · n)` go to training. Needs `n ≥ 4`, at least two
/// training and one test observation.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n < 4 || n_train < 2 || n - n_train < 1 {
        return Err(Error::TooFewSamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let SplitMode::Shuffled(seed) = spec.mode {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut test = order.split_off(n_train);
    order.sort_unstable();
    test.sort_unstable();
    Ok((order, test))
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.n(), spec)?;
    Ok((dataset.select(&train)?, dataset.select(&test)?))
}

fn check_symmetric(a: &SquareMatrix) -> Result<()> {
    let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let asym = a.asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

fn symmetric_part(a: &SquareMatrix) -> DMatrix<f64> {
    let m = a.as_matrix();
    (m + m.transpose()) * 0.5
}

/// Clips eigenvalues below `floor` up to `floor`.
pub fn project_pd(a: &SquareMatrix, floor: f64) -> Result<SquareMatrix> {
    check_symmetric(a)?;
    if !(floor > 0.0) {
        return Err(Error::InvalidConfig(format!("floor must be positive, got {floor}")));
    }
    let eig = SymmetricEigen::new(symmetric_part(a));
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(a.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok(SquareMatrix::from_unchecked((&out + out.transpose()) * 0.5))
}

pub fn min_eigenvalue(a: &SquareMatrix) -> f64 {
    SymmetricEigen::new(symmetric_part(a))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &l| m.min(l))
}

/// Zero-mean Gaussian log-likelihood of `test` under the precision matrix
/// `project_pd(omega, floor)`:
/// `(n/2)(log det Ω − tr(S Ω) − p log 2π)` with `S` the test second moment.
pub fn gaussian_loglik(test: &Dataset, omega: &SquareMatrix, floor: f64) -> Result<f64> {
    if omega.order() != test.p() {
        return Err(Error::DimensionMismatch(format!(
            "precision of order {} for {} variables",
            omega.order(),
            test.p()
        )));
    }
    let pd = project_pd(omega, floor)?;
    let log_det: f64 = SymmetricEigen::new(symmetric_part(&pd))
        .eigenvalues
        .iter()
        .map(|l| l.max(floor).ln())
        .sum();
    let s = test.second_moment();
    let trace = s.as_matrix().component_mul(pd.as_matrix()).sum();
    let n = test.n() as f64;
    let p = test.p() as f64;
    Ok(0.5 * n * (log_det - trace - p * (2.0 * std::f64::consts::PI).ln()))
}

/// Number of upper-triangle entries, diagonal included, with `|a| > zero_tol`.
pub fn upper_nonzeros(a: &SquareMatrix, zero_tol: f64) -> usize {
    let p = a.order();
    (0..p)
        .flat_map(|j| (j..p).map(move |k| (j, k)))
        .filter(|&(j, k)| a[(j, k)].abs() > zero_tol)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AicScore {
    pub lambda: f64,
    /// `None` when the fit was infeasible at this value.
    pub aic: Option<f64>,
    pub nonzeros: usize,
}

/// `−2 loglik + 2 k` on the pooled sample with `k` from [`upper_nonzeros`].
pub fn aic(omega: &SquareMatrix, dataset: &Dataset, zero_tol: f64) -> Result<(f64, usize)> {
    let k = upper_nonzeros(omega, zero_tol);
    let ll = gaussian_loglik(dataset, omega, DEFAULT_PD_FLOOR)?;
    Ok((-2.0 * ll + 2.0 * k as f64, k))
}

/// Runs `fit` on every grid value and returns the AIC minimizer; ties go to
/// the larger value. Infeasible fits are skipped.
pub fn select_by_aic<T>(
    grid: &[f64],
    dataset: &Dataset,
    zero_tol: f64,
    mut fit: impl FnMut(f64) -> Result<(T, SquareMatrix)>,
) -> Result<(f64, T, Vec<AicScore>)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    let mut order = grid.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    order.dedup();
    let mut best: Option<(f64, f64, T)> = None;
    let mut scores = Vec::with_capacity(order.len());
    for lambda in order {
        match fit(lambda) {
            Ok((model, omega)) => {
                let (score, k) = aic(&omega, dataset, zero_tol)?;
                scores.push(AicScore {
                    lambda,
                    aic: Some(score),
                    nonzeros: k,
                });
                let better = best
                    .as_ref()
                    .map_or(true, |(_, s, _)| score < s - 1e-12 * s.abs().max(1.0));
                if better {
                    best = Some((lambda, score, model));
                }
            }
            Err(Error::InfeasibleColumn { .. }) => scores.push(AicScore {
                lambda,
                aic: None,
                nonzeros: 0,
            }),
            Err(e) => return Err(e),
        }
    }
    scores.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    match best {
        Some((lambda, _, model)) => Ok((lambda, model, scores)),
        None => Err(Error::AllInfeasible),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

/// Off-diagonal edge recovery with `|entry| > zero_tol` defining an edge.
/// Empty denominators give the perfect score (TPR 1, FPR 0, F1 1).
pub fn support_metrics(
    estimate: &SquareMatrix,
    target: &SquareMatrix,
    zero_tol: f64,
) -> Result<SupportMetrics> {
    crate::data::same_order(estimate, target)?;
    let p = estimate.order();
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for j in 0..p {
        for k in (j + 1)..p {
            let e = estimate[(j, k)].abs() > zero_tol;
            let t = target[(j, k)].abs() > zero_tol;
            match (e, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    Ok(SupportMetrics {
        tpr: ratio(tp, tp + fn_, 1.0),
        fpr: ratio(fp, fp + tn, 0.0),
        f1: ratio(2 * tp, 2 * tp + fp + fn_, 1.0),
    })
}

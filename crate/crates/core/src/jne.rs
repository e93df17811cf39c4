//! The joint estimator: for every column `j`,
//!
//! ```text
//! min |m|₁ + (1/n) Σ_i |r^i|₁
//! s.t. |S^i (m + r^i) − e_j|_∞ ≤ λ  for every i,   Σ_i r^i = 0
//! ```
//!
//! `m` becomes column `j` of the shared matrix `M` and `r^i` column `j` of
//! the nuisance matrix `R^i`. The columns are independent programs and are
//! solved on a dedicated thread pool.
//!
//! Samples whose local covariances are bit-for-bit identical (repeated
//! confounder values) are merged before solving: any optimum can be averaged
//! over the members of such a group without changing feasibility or raising
//! the objective, so one shared `r` per group weighted by the group size is
//! an exact reformulation.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{elementwise_inf, Dataset, SquareMatrix};
use crate::error::{Error, Result};
use crate::eval::{select_by_aic, AicScore};
use crate::kernel::LocalCovariances;
use crate::lp::{solve_lp, LpBuilder, LpProblem, LpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JneConfig {
    pub lambda: f64,
    /// Feasibility tolerance handed to the column programs.
    pub tol: f64,
    pub column_parallelism: usize,
}

impl Default for JneConfig {
    fn default() -> Self {
        JneConfig {
            lambda: 0.078,
            tol: crate::lp::DEFAULT_TOL,
            column_parallelism: 1,
        }
    }
}

impl JneConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        JneConfig {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.column_parallelism == 0 {
            return Err(Error::InvalidConfig("column_parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiagnostics {
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    /// `max_i |S^i (m + r^i) − e_j|_∞` at the returned point.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JneSolution {
    pub omega0: SquareMatrix,
    pub nuisance: Vec<SquareMatrix>,
    pub raw_omega0: SquareMatrix,
    pub raw_nuisance: Vec<SquareMatrix>,
    pub lambda: f64,
    pub columns: Vec<ColumnDiagnostics>,
    /// `max_i |S^i (M + R^i) − I|_∞` over the raw solution.
    pub max_residual: f64,
    /// `|Σ_i R^i|_∞` over the raw solution.
    pub max_nuisance_sum: f64,
    /// Number of distinct local covariances the programs were built on.
    pub blocks: usize,
}

impl JneSolution {
    pub fn objective(&self) -> f64 {
        self.columns.iter().map(|c| c.objective).sum()
    }
}

/// Samples grouped by identical local covariance.
pub(crate) struct Blocks {
    pub(crate) representative: Vec<usize>,
    pub(crate) weight: Vec<f64>,
    pub(crate) of_sample: Vec<usize>,
}

pub(crate) fn group_identical(covs: &LocalCovariances) -> Blocks {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut blocks = Blocks {
        representative: Vec::new(),
        weight: Vec::new(),
        of_sample: Vec::with_capacity(covs.len()),
    };
    for (i, s) in covs.matrices().iter().enumerate() {
        let key: Vec<u64> = s.iter().map(|v| v.to_bits()).collect();
        let b = *index.entry(key).or_insert_with(|| {
            blocks.representative.push(i);
            blocks.weight.push(0.0);
            blocks.representative.len() - 1
        });
        blocks.weight[b] += 1.0;
        blocks.of_sample.push(b);
    }
    blocks
}

/// Column program over `mats` with per-matrix weights. Variable layout:
/// `m⁺, m⁻`, then `r⁺, r⁻` for each matrix in turn. With `slack` a final
/// variable `t` is added to every inequality and is the only cost.
fn column_program(
    j: usize,
    mats: &[&SquareMatrix],
    weights: &[f64],
    n: f64,
    lambda: f64,
    slack: bool,
) -> LpProblem {
    let p = mats[0].order();
    let b = mats.len();
    let nvars = 2 * p * (b + 1) + usize::from(slack);
    let mut costs = vec![0.0; nvars];
    if slack {
        costs[nvars - 1] = 1.0;
    } else {
        costs[..2 * p].iter_mut().for_each(|c| *c = 1.0);
        for (k, w) in weights.iter().enumerate() {
            let base = 2 * p * (k + 1);
            costs[base..base + 2 * p].iter_mut().for_each(|c| *c = w / n);
        }
    }
    let mut lp = LpBuilder::new(costs);
    let mut row = Vec::with_capacity(4 * p + 1);
    let mut neg = Vec::with_capacity(4 * p + 1);
    for (k, s) in mats.iter().enumerate() {
        let base = 2 * p * (k + 1);
        for a in 0..p {
            row.clear();
            for c in 0..p {
                let v = s[(a, c)];
                if v != 0.0 {
                    row.push((c, v));
                    row.push((p + c, -v));
                    row.push((base + c, v));
                    row.push((base + p + c, -v));
                }
            }
            neg.clear();
            neg.extend(row.iter().map(|&(idx, v)| (idx, -v)));
            if slack {
                row.push((nvars - 1, -1.0));
                neg.push((nvars - 1, -1.0));
            }
            let e = if a == j { 1.0 } else { 0.0 };
            lp.add_le(&row, lambda + e);
            lp.add_le(&neg, lambda - e);
        }
    }
    for a in 0..p {
        let eq: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .flat_map(|(k, &w)| {
                let base = 2 * p * (k + 1);
                [(base + a, w), (base + p + a, -w)]
            })
            .collect();
        lp.add_eq(&eq, 0.0);
    }
    lp.build().expect("column program indices are in range")
}

/// The column program for column `j` (zero-based) exactly as stated:
/// `2p(n+1)` split variables, `2np` inequalities and `p` equalities.
pub fn build_column_lp(j: usize, covs: &LocalCovariances, lambda: f64) -> Result<LpProblem> {
    let p = covs.order();
    if j >= p {
        return Err(Error::DimensionMismatch(format!("column {j} out of range for order {p}")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mats: Vec<&SquareMatrix> = covs.matrices().iter().collect();
    let weights = vec![1.0; mats.len()];
    Ok(column_program(j, &mats, &weights, mats.len() as f64, lambda, false))
}

/// Splits a program solution back into `m` and per-matrix `r` columns.
fn unpack(x: &[f64], p: usize, b: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = (0..p).map(|c| x[c] - x[p + c]).collect();
    let r = (0..b)
        .map(|k| {
            let base = 2 * p * (k + 1);
            (0..p).map(|c| x[base + c] - x[base + p + c]).collect()
        })
        .collect();
    (m, r)
}

struct ColumnResult {
    m: Vec<f64>,
    r: Vec<Vec<f64>>,
    diag: ColumnDiagnostics,
}

fn solve_column(
    j: usize,
    mats: &[&SquareMatrix],
    weights: &[f64],
    n: f64,
    config: &JneConfig,
) -> Result<ColumnResult> {
    let p = mats[0].order();
    let lp = column_program(j, mats, weights, n, config.lambda, false);
    let sol = solve_lp(&lp, config.tol)?;
    if sol.status != LpStatus::Optimal {
        return Err(infeasibility_report(j, mats, n, config));
    }
    let (m, r) = unpack(&sol.x, p, mats.len());
    let residual = mats
        .iter()
        .zip(&r)
        .map(|(s, rk)| column_residual(s, &m, rk, j))
        .fold(0.0, f64::max);
    Ok(ColumnResult {
        m,
        r,
        diag: ColumnDiagnostics {
            objective: sol.objective_value,
            status: sol.status,
            iterations: sol.iterations,
            residual,
        },
    })
}

fn column_residual(s: &SquareMatrix, m: &[f64], r: &[f64], j: usize) -> f64 {
    let p = s.order();
    (0..p)
        .map(|a| {
            let v: f64 = (0..p).map(|c| s[(a, c)] * (m[c] + r[c])).sum();
            (v - if a == j { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest extra slack that makes column `j` feasible, and the matrix
/// that needs it.
fn infeasibility_report(j: usize, mats: &[&SquareMatrix], n: f64, config: &JneConfig) -> Error {
    let weights = vec![1.0; mats.len()];
    let lp = column_program(j, mats, &weights, n, config.lambda, true);
    let (violation, sample) = match solve_lp(&lp, config.tol) {
        Ok(sol) if sol.status == LpStatus::Optimal => {
            let p = mats[0].order();
            let (m, r) = unpack(&sol.x, p, mats.len());
            let worst = mats
                .iter()
                .zip(&r)
                .map(|(s, rk)| column_residual(s, &m, rk, j))
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            (sol.objective_value, worst)
        }
        _ => (f64::NAN, None),
    };
    Error::InfeasibleColumn {
        column: j,
        lambda: config.lambda,
        violation,
        sample,
    }
}

/// Keeps the smaller-magnitude entry of each off-diagonal pair; exact ties
/// keep the upper-triangle value.
pub fn symmetrize(a: &SquareMatrix) -> SquareMatrix {
    let p = a.order();
    let mut out = a.as_matrix().clone();
    for j in 0..p {
        for k in (j + 1)..p {
            let (u, l) = (a[(j, k)], a[(k, j)]);
            let v = if u.abs() <= l.abs() { u } else { l };
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    SquareMatrix::from_unchecked(out)
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

pub fn solve_jne(covs: &LocalCovariances, config: &JneConfig) -> Result<JneSolution> {
    config.validate()?;
    let p = covs.order();
    let n = covs.len();
    let blocks = group_identical(covs);
    let mats: Vec<&SquareMatrix> = blocks
        .representative
        .iter()
        .map(|&i| &covs.matrices()[i])
        .collect();

    let pool = thread_pool(config.column_parallelism)?;
    let results: Vec<Result<ColumnResult>> = pool.install(|| {
        (0..p)
            .into_par_iter()
            .map(|j| solve_column(j, &mats, &blocks.weight, n as f64, config))
            .collect()
    });

    let mut raw_m = DMatrix::zeros(p, p);
    let mut raw_r = vec![DMatrix::zeros(p, p); blocks.weight.len()];
    let mut columns = Vec::with_capacity(p);
    for (j, res) in results.into_iter().enumerate() {
        let res = res?;
        for c in 0..p {
            raw_m[(c, j)] = res.m[c];
            for (k, rk) in res.r.iter().enumerate() {
                raw_r[k][(c, j)] = rk[c];
            }
        }
        columns.push(res.diag);
    }
    let raw_omega0 = SquareMatrix::from_unchecked(raw_m);
    let block_r: Vec<SquareMatrix> = raw_r.into_iter().map(SquareMatrix::from_unchecked).collect();
    let raw_nuisance: Vec<SquareMatrix> =
        blocks.of_sample.iter().map(|&b| block_r[b].clone()).collect();

    let mut total = DMatrix::zeros(p, p);
    for r in &raw_nuisance {
        total += r.as_matrix();
    }
    let max_nuisance_sum = elementwise_inf(&SquareMatrix::from_unchecked(total));
    let max_residual = columns.iter().map(|c| c.residual).fold(0.0, f64::max);
    let block_sym: Vec<SquareMatrix> = block_r.iter().map(symmetrize).collect();

    Ok(JneSolution {
        omega0: symmetrize(&raw_omega0),
        nuisance: blocks.of_sample.iter().map(|&b| block_sym[b].clone()).collect(),
        raw_omega0,
        raw_nuisance,
        lambda: config.lambda,
        columns,
        max_residual,
        max_nuisance_sum,
        blocks: blocks.weight.len(),
    })
}

/// Fits every grid value and keeps the AIC minimizer. Values at which some
/// column is infeasible are skipped.
pub fn select_lambda_aic(
    covs: &LocalCovariances,
    dataset: &Dataset,
    grid: &[f64],
    template: &JneConfig,
) -> Result<(f64, JneSolution, Vec<AicScore>)> {
    select_by_aic(grid, dataset, template.tol, |lambda| {
        let config = JneConfig {
            lambda,
            ..template.clone()
        };
        solve_jne(covs, &config).map(|s| {
            let omega = s.omega0.clone();
            (s, omega)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::oracle_solve;

    fn covs(mats: Vec<SquareMatrix>) -> LocalCovariances {
        let n = mats.len();
        LocalCovariances::new(mats, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    fn m2(v: [f64; 4]) -> SquareMatrix {
        SquareMatrix::from_row_slice(2, &v).unwrap()
    }

    #[test]
    fn column_program_shape() {
        let c = covs(vec![SquareMatrix::identity(3); 4]);
        let lp = build_column_lp(1, &c, 0.1).unwrap();
        assert_eq!(lp.num_vars(), 2 * 3 * 5);
        assert_eq!(lp.num_ineq(), 2 * 4 * 3);
        assert_eq!(lp.num_eq(), 3);
    }

    #[test]
    fn single_identity_forces_unit_column() {
        let c = covs(vec![SquareMatrix::identity(2)]);
        let sol = solve_jne(&c, &JneConfig::with_lambda(0.0)).unwrap();
        assert_eq!(sol.omega0, SquareMatrix::identity(2));
        assert!(elementwise_inf(&sol.nuisance[0]) < 1e-12);
    }

    #[test]
    fn repeated_identity_gives_zero_nuisance() {
        let c = covs(vec![SquareMatrix::identity(2); 2]);
        let sol = solve_jne(&c, &JneConfig::with_lambda(0.0)).unwrap();
        assert_eq!(sol.blocks, 1);
        assert!((sol.omega0[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(sol.nuisance.iter().all(|r| elementwise_inf(r) < 1e-12));
    }

    #[test]
    fn small_lambda_keeps_diagonal() {
        let c = covs(vec![SquareMatrix::identity(3)]);
        let sol = solve_jne(&c, &JneConfig::with_lambda(0.4)).unwrap();
        for j in 0..3 {
            assert!((sol.omega0[(j, j)] - 0.6).abs() < 1e-9);
        }
    }

    #[test]
    fn two_diagonal_matrices_match_oracle() {
        let c = covs(vec![m2([1.0, 0.0, 0.0, 1.0]), m2([2.0, 0.0, 0.0, 1.0])]);
        let lp = build_column_lp(0, &c, 0.1).unwrap();
        let oracle = oracle_solve(&lp).unwrap();
        let sol = solve_jne(&c, &JneConfig::with_lambda(0.1)).unwrap();
        assert!((sol.columns[0].objective - oracle.objective_value).abs() < 1e-9);
    }

    #[test]
    fn opposite_matrices_are_reconciled_by_nuisance() {
        // S¹ = I, S² = −I at λ = 0: m = 0, r¹ = e_j, r² = −e_j is feasible.
        let c = covs(vec![SquareMatrix::identity(2), SquareMatrix::identity(2).scale(-1.0)]);
        let sol = solve_jne(&c, &JneConfig::with_lambda(0.0)).unwrap();
        assert!(elementwise_inf(&sol.omega0) < 1e-12);
        assert!((sol.objective() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn singular_matrix_at_zero_lambda_is_infeasible() {
        let c = covs(vec![m2([1.0, 1.0, 1.0, 1.0])]);
        let err = solve_jne(&c, &JneConfig::with_lambda(0.0)).unwrap_err();
        match err {
            Error::InfeasibleColumn { column, violation, sample, .. } => {
                assert_eq!(column, 0);
                assert!((violation - 0.5).abs() < 1e-9);
                assert_eq!(sample, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symmetrize_table() {
        let a = m2([1.0, 0.5, -0.2, 2.0]);
        assert_eq!(symmetrize(&a), m2([1.0, -0.2, -0.2, 2.0]));
        let tie = m2([1.0, 0.3, -0.3, 1.0]);
        assert_eq!(symmetrize(&tie), m2([1.0, 0.3, 0.3, 1.0]));
        let sym = m2([1.0, 0.7, 0.7, 3.0]);
        assert_eq!(symmetrize(&sym), sym);
    }

    #[test]
    fn rejects_negative_lambda() {
        let c = covs(vec![SquareMatrix::identity(2)]);
        assert!(matches!(
            solve_jne(&c, &JneConfig::with_lambda(-0.1)),
            Err(Error::InvalidConfig(_))
        ));
    }
}

//! Linear programs in a single canonical form and the solvers behind them.
//!
//! Every program is `min cᵀx` subject to `A x ≤ b`, `E x = f` and `x ≥ 0`.
//! Callers that need free variables split them upstream. Two native solvers
//! implement [`LpSolver`]:
//!
//! * [`DualSimplex`]: a sparse bounded dual simplex with a product-form basis
//!   inverse. It needs a dual feasible start, so it only accepts nonnegative
//!   costs, which covers every program built by the estimators.
//! * [`DenseSimplex`]: a two-phase primal tableau simplex using Bland's rule.
//!   It handles any cost vector and is intended for small programs.
//!
//! [`solve_lp`] picks between them. [`oracle_solve`] enumerates vertices and
//! serves as an independent check on tiny programs.

mod dense;
mod dual;
mod format;
mod oracle;

pub use dense::DenseSimplex;
pub use dual::DualSimplex;
pub use format::write_lp_format;
pub use oracle::{oracle_solve, ORACLE_MAX_CONSTRAINTS, ORACLE_MAX_VARIABLES};

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Default feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// `min cᵀx  s.t.  A x ≤ b,  E x = f,  x ≥ 0` with sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    costs: Vec<f64>,
    ineq: CsMat<f64>,
    ineq_rhs: Vec<f64>,
    eq: CsMat<f64>,
    eq_rhs: Vec<f64>,
}

impl LpProblem {
    /// Builds a program from dense row lists. Convenient for small problems.
    pub fn from_dense(
        costs: Vec<f64>,
        ineq: &[Vec<f64>],
        ineq_rhs: Vec<f64>,
        eq: &[Vec<f64>],
        eq_rhs: Vec<f64>,
    ) -> Result<Self> {
        let mut b = LpBuilder::new(costs);
        for (row, &rhs) in ineq.iter().zip(&ineq_rhs) {
            b.add_le(&dense_row(row), rhs);
        }
        for (row, &rhs) in eq.iter().zip(&eq_rhs) {
            b.add_eq(&dense_row(row), rhs);
        }
        if ineq.len() != ineq_rhs.len() || eq.len() != eq_rhs.len() {
            return Err(Error::DimensionMismatch(
                "constraint rows and right-hand sides differ in length".into(),
            ));
        }
        if ineq.iter().chain(eq).any(|r| r.len() != b.costs.len()) {
            return Err(Error::DimensionMismatch(
                "constraint row length differs from the number of variables".into(),
            ));
        }
        b.build()
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Inequality matrix in CSR layout.
    pub fn ineq(&self) -> &CsMat<f64> {
        &self.ineq
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    /// Equality matrix in CSR layout.
    pub fn eq(&self) -> &CsMat<f64> {
        &self.eq
    }

    pub fn eq_rhs(&self) -> &[f64] {
        &self.eq_rhs
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.costs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any constraint or sign restriction at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, &v| w.max(-v));
        for (row, &rhs) in self.ineq.outer_iterator().zip(&self.ineq_rhs) {
            let act: f64 = row.iter().map(|(j, a)| a * x[j]).sum();
            worst = worst.max(act - rhs);
        }
        for (row, &rhs) in self.eq.outer_iterator().zip(&self.eq_rhs) {
            let act: f64 = row.iter().map(|(j, a)| a * x[j]).sum();
            worst = worst.max((act - rhs).abs());
        }
        worst
    }

    /// The same program with every cost multiplied by `factor`.
    pub fn with_scaled_costs(&self, factor: f64) -> LpProblem {
        LpProblem {
            costs: self.costs.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn ineq_dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vars()];
        if let Some(r) = self.ineq.outer_view(i) {
            for (j, &a) in r.iter() {
                row[j] = a;
            }
        }
        row
    }

    pub(crate) fn eq_dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vars()];
        if let Some(r) = self.eq.outer_view(i) {
            for (j, &a) in r.iter() {
                row[j] = a;
            }
        }
        row
    }
}

fn dense_row(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(j, &a)| (j, a))
        .collect()
}

/// Incremental row-by-row construction of an [`LpProblem`].
#[derive(Debug, Clone)]
pub struct LpBuilder {
    costs: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    ineq_rhs: Vec<f64>,
    eq: Vec<(usize, usize, f64)>,
    eq_rhs: Vec<f64>,
    bad_index: Option<usize>,
}

impl LpBuilder {
    pub fn new(costs: Vec<f64>) -> Self {
        LpBuilder {
            costs,
            ineq: Vec::new(),
            ineq_rhs: Vec::new(),
            eq: Vec::new(),
            eq_rhs: Vec::new(),
            bad_index: None,
        }
    }

    /// Adds `Σ a_j x_j ≤ rhs`. Zero coefficients are dropped.
    pub fn add_le(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> &mut Self {
        let row = self.ineq_rhs.len();
        Self::push(&mut self.ineq, &mut self.bad_index, self.costs.len(), row, coeffs);
        self.ineq_rhs.push(rhs);
        self
    }

    /// Adds `Σ a_j x_j = rhs`. Zero coefficients are dropped.
    pub fn add_eq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> &mut Self {
        let row = self.eq_rhs.len();
        Self::push(&mut self.eq, &mut self.bad_index, self.costs.len(), row, coeffs);
        self.eq_rhs.push(rhs);
        self
    }

    fn push(
        triplets: &mut Vec<(usize, usize, f64)>,
        bad: &mut Option<usize>,
        nvars: usize,
        row: usize,
        coeffs: &[(usize, f64)],
    ) {
        for &(j, a) in coeffs {
            if j >= nvars {
                bad.get_or_insert(j);
            } else if a != 0.0 {
                triplets.push((row, j, a));
            }
        }
    }

    pub fn build(self) -> Result<LpProblem> {
        if let Some(j) = self.bad_index {
            return Err(Error::DimensionMismatch(format!(
                "variable index {j} out of range for {} variables",
                self.costs.len()
            )));
        }
        let finite = self.costs.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.ineq.iter().chain(&self.eq).all(|t| t.2.is_finite());
        if !finite {
            return Err(Error::NonFiniteInput("linear program coefficients".into()));
        }
        let nvars = self.costs.len();
        Ok(LpProblem {
            ineq: to_csr(self.ineq_rhs.len(), nvars, &self.ineq),
            eq: to_csr(self.eq_rhs.len(), nvars, &self.eq),
            costs: self.costs,
            ineq_rhs: self.ineq_rhs,
            eq_rhs: self.eq_rhs,
        })
    }
}

fn to_csr(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> CsMat<f64> {
    let mut tri = TriMat::with_capacity((rows, cols), triplets.len());
    for &(i, j, a) in triplets {
        tri.add_triplet(i, j, a);
    }
    tri.to_csr()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. `x` is empty unless the status is `Optimal`; the
/// objective is `+∞` for infeasible and `−∞` for unbounded programs.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn infeasible(iterations: usize) -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective_value: f64::INFINITY,
            iterations,
        }
    }

    pub(crate) fn unbounded(iterations: usize) -> Self {
        LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective_value: f64::NEG_INFINITY,
            iterations,
        }
    }

    pub(crate) fn optimal(problem: &LpProblem, x: Vec<f64>, iterations: usize) -> Self {
        LpSolution {
            status: LpStatus::Optimal,
            objective_value: problem.objective(&x),
            x,
            iterations,
        }
    }
}

/// Seam for swapping in other solvers. Implementations must leave the
/// problem untouched and may be called from several threads at once.
pub trait LpSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, problem: &LpProblem, tol: f64) -> Result<LpSolution>;
}

/// Dispatches to [`DualSimplex`] when all costs are nonnegative and to
/// [`DenseSimplex`] otherwise. Optimal points are re-substituted into the
/// constraints before being returned.
#[derive(Debug, Clone, Default)]
pub struct AutoSolver {
    pub dual: DualSimplex,
    pub dense: DenseSimplex,
}

impl LpSolver for AutoSolver {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve(&self, problem: &LpProblem, tol: f64) -> Result<LpSolution> {
        let sol = if problem.costs().iter().all(|&c| c >= 0.0) {
            self.dual.solve(problem, tol)?
        } else {
            self.dense.solve(problem, tol)?
        };
        if sol.status == LpStatus::Optimal {
            let viol = problem.max_violation(&sol.x);
            if viol > tol {
                return Err(Error::Numerical(format!(
                    "solver returned a point violating constraints by {viol:.3e}"
                )));
            }
        }
        Ok(sol)
    }
}

/// Solves `problem` with the default native solver.
pub fn solve_lp(problem: &LpProblem, tol: f64) -> Result<LpSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    AutoSolver::default().solve(problem, tol)
}

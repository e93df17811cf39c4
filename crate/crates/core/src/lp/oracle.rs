//! Exhaustive vertex enumeration for tiny programs.
//!
//! The feasible set lies in the nonnegative orthant, so it is either empty
//! or has a vertex. An empty vertex list therefore certifies infeasibility.
//! Unboundedness is decided separately by minimizing the cost over the
//! normalized recession cone `{d ≥ 0, A d ≤ 0, E d = 0, Σ d = 1}`, which is
//! again a polytope handled by the same enumeration.

use super::{LpProblem, LpSolution};
use crate::error::{Error, Result};

pub const ORACLE_MAX_VARIABLES: usize = 12;
pub const ORACLE_MAX_CONSTRAINTS: usize = 16;
const MAX_SUBSETS: u64 = 20_000_000;
const SINGULAR: f64 = 1e-10;

/// Exact optimum of a small program by vertex enumeration.
pub fn oracle_solve(problem: &LpProblem) -> Result<LpSolution> {
    let v = problem.num_vars();
    let rows = problem.num_ineq() + problem.num_eq();
    if v > ORACLE_MAX_VARIABLES || rows > ORACLE_MAX_CONSTRAINTS {
        return Err(Error::TooLargeForOracle(format!(
            "{v} variables and {rows} constraints"
        )));
    }
    let ineq: Vec<(Vec<f64>, f64)> = (0..problem.num_ineq())
        .map(|i| (problem.ineq_dense_row(i), problem.ineq_rhs()[i]))
        .collect();
    let eq: Vec<(Vec<f64>, f64)> = (0..problem.num_eq())
        .map(|i| (problem.eq_dense_row(i), problem.eq_rhs()[i]))
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    enumerate_vertices(v, &ineq, &eq, &mut |x| {
        let value = problem.objective(x);
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, x.to_vec()));
        }
    })?;
    let Some((_, x)) = best else {
        return Ok(LpSolution::infeasible(0));
    };

    let cone_ineq: Vec<(Vec<f64>, f64)> = ineq.iter().map(|(a, _)| (a.clone(), 0.0)).collect();
    let mut cone_eq: Vec<(Vec<f64>, f64)> = eq.iter().map(|(e, _)| (e.clone(), 0.0)).collect();
    cone_eq.push((vec![1.0; v], 1.0));
    let mut descent = false;
    let scale = 1.0 + problem.costs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    enumerate_vertices(v, &cone_ineq, &cone_eq, &mut |d| {
        if problem.objective(d) < -1e-9 * scale {
            descent = true;
        }
    })?;
    if descent {
        return Ok(LpSolution::unbounded(0));
    }
    Ok(LpSolution::optimal(problem, x, 0))
}

/// Calls `visit` on every vertex of `{x ≥ 0, ineq, eq}` (with repetition
/// for degenerate vertices).
fn enumerate_vertices(
    v: usize,
    ineq: &[(Vec<f64>, f64)],
    eq: &[(Vec<f64>, f64)],
    visit: &mut dyn FnMut(&[f64]),
) -> Result<()> {
    let Some(eq) = independent_rows(v, eq) else {
        return Ok(());
    };
    let need = v.saturating_sub(eq.len());
    // Candidate active constraints: inequality rows, then `x_j ≥ 0`.
    let mut pool: Vec<(Vec<f64>, f64)> = ineq.to_vec();
    for j in 0..v {
        let mut row = vec![0.0; v];
        row[j] = -1.0;
        pool.push((row, 0.0));
    }
    if binomial(pool.len() as u64, need as u64) > MAX_SUBSETS {
        return Err(Error::TooLargeForOracle(format!(
            "{} candidate rows choose {need}",
            pool.len()
        )));
    }
    let scale = 1.0
        + ineq
            .iter()
            .chain(&eq)
            .fold(0.0f64, |m, (_, b)| m.max(b.abs()));
    let feas_tol = 1e-9 * scale;

    let mut subset: Vec<usize> = (0..need).collect();
    loop {
        if need <= pool.len() {
            let mut system: Vec<(Vec<f64>, f64)> = eq.clone();
            system.extend(subset.iter().map(|&k| pool[k].clone()));
            if let Some(x) = solve_square(v, system) {
                let feasible = x.iter().all(|&xi| xi >= -feas_tol)
                    && ineq.iter().all(|(a, b)| dot(a, &x) <= b + feas_tol)
                    && eq.iter().all(|(a, b)| (dot(a, &x) - b).abs() <= feas_tol);
                if feasible {
                    let x: Vec<f64> = x.iter().map(|xi| xi.max(0.0)).collect();
                    visit(&x);
                }
            }
        }
        if !next_subset(&mut subset, pool.len()) {
            return Ok(());
        }
    }
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Advances to the next `k`-subset of `0..n` in lexicographic order.
fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for t in i + 1..k {
                subset[t] = subset[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Drops linearly dependent equality rows. Returns `None` when the rows are
/// inconsistent.
fn independent_rows(v: usize, rows: &[(Vec<f64>, f64)]) -> Option<Vec<(Vec<f64>, f64)>> {
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    // Reduced copies of kept rows, each with its pivot column.
    let mut reduced: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for (row, rhs) in rows {
        let mut r = row.clone();
        let mut b = *rhs;
        for (pr, pb, pc) in &reduced {
            let f = r[*pc] / pr[*pc];
            if f != 0.0 {
                for j in 0..v {
                    r[j] -= f * pr[j];
                }
                b -= f * pb;
            }
        }
        let scale = 1.0 + row.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let pivot = (0..v).max_by(|&a, &c| r[a].abs().total_cmp(&r[c].abs()));
        match pivot {
            Some(pc) if r[pc].abs() > SINGULAR * scale => {
                reduced.push((r, b, pc));
                kept.push((row.clone(), *rhs));
            }
            _ => {
                if b.abs() > 1e-9 * (1.0 + rhs.abs()) {
                    return None;
                }
            }
        }
    }
    Some(kept)
}

/// Gaussian elimination with partial pivoting on a `v × v` system.
fn solve_square(v: usize, mut rows: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
    if rows.len() != v {
        return None;
    }
    for col in 0..v {
        let piv = (col..v).max_by(|&a, &b| rows[a].0[col].abs().total_cmp(&rows[b].0[col].abs()))?;
        if rows[piv].0[col].abs() < SINGULAR {
            return None;
        }
        rows.swap(col, piv);
        let (head, tail) = rows.split_at_mut(col + 1);
        let (prow, pb) = &head[col];
        for (r, b) in tail.iter_mut() {
            let f = r[col] / prow[col];
            if f != 0.0 {
                for j in col..v {
                    r[j] -= f * prow[j];
                }
                *b -= f * pb;
            }
        }
    }
    let mut x = vec![0.0; v];
    for i in (0..v).rev() {
        let (r, b) = &rows[i];
        let s: f64 = (i + 1..v).map(|j| r[j] * x[j]).sum();
        x[i] = (b - s) / r[i];
    }
    Some(x)
}

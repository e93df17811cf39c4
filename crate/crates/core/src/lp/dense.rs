use super::{LpProblem, LpSolution, LpSolver};
use crate::error::{Error, Result};

/// Two-phase primal simplex on a dense tableau with Bland's pivoting rule,
/// which rules out cycling at the price of slow progress on large programs.
#[derive(Debug, Clone)]
pub struct DenseSimplex {
    pub max_iterations: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex {
            max_iterations: 200_000,
        }
    }
}

const PIVOT_EPS: f64 = 1e-11;

struct Tableau {
    /// `rows × (cols + 1)`; the last entry of each row is the right-hand side.
    t: Vec<Vec<f64>>,
    /// Reduced-cost row followed by the negated objective value.
    obj: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
    iterations: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn pivot(&mut self, r: usize, q: usize) {
        let piv = self.t[r][q];
        for v in self.t[r].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i != r {
                let f = row[q];
                if f != 0.0 {
                    for (v, p) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                    row[q] = 0.0;
                }
            }
        }
        let f = self.obj[q];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.obj[q] = 0.0;
        }
        self.basis[r] = q;
        self.iterations += 1;
    }

    /// Sets the objective row from `costs` (indexed by column) and prices
    /// out the current basis.
    fn load_costs(&mut self, costs: &[f64]) {
        self.obj = costs.to_vec();
        self.obj.push(0.0);
        for r in 0..self.t.len() {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for (v, p) in self.obj.iter_mut().zip(&self.t[r]) {
                    *v -= cb * p;
                }
            }
        }
    }

    fn run(&mut self, allowed: usize, tol: f64, max_iter: usize) -> Result<Phase> {
        loop {
            if self.iterations >= max_iter {
                return Err(Error::IterationLimit(max_iter));
            }
            let Some(q) = (0..allowed).find(|&j| self.obj[j] < -tol) else {
                return Ok(Phase::Optimal);
            };
            let rhs = self.cols;
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][q];
                if a > PIVOT_EPS {
                    let ratio = self.t[r][rhs] / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(Phase::Unbounded),
                Some((r, _)) => self.pivot(r, q),
            }
        }
    }
}

impl LpSolver for DenseSimplex {
    fn name(&self) -> &'static str {
        "dense-simplex"
    }

    fn solve(&self, problem: &LpProblem, tol: f64) -> Result<LpSolution> {
        let nv = problem.num_vars();
        let m1 = problem.num_ineq();
        let m2 = problem.num_eq();
        let m = m1 + m2;
        // Columns: structurals, one slack per inequality, then artificials.
        let n_struct = nv + m1;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut needs_art = Vec::with_capacity(m);
        for i in 0..m1 {
            let mut row = problem.ineq_dense_row(i);
            row.resize(n_struct, 0.0);
            row[nv + i] = 1.0;
            let mut rhs = problem.ineq_rhs()[i];
            let flip = rhs < 0.0;
            if flip {
                row.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
            }
            row.push(rhs);
            needs_art.push(flip);
            rows.push(row);
        }
        for i in 0..m2 {
            let mut row = problem.eq_dense_row(i);
            row.resize(n_struct, 0.0);
            let mut rhs = problem.eq_rhs()[i];
            if rhs < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
            }
            row.push(rhs);
            needs_art.push(true);
            rows.push(row);
        }
        let n_art = needs_art.iter().filter(|&&a| a).count();
        let cols = n_struct + n_art;
        let mut basis = Vec::with_capacity(m);
        let mut next_art = n_struct;
        for (i, row) in rows.iter_mut().enumerate() {
            let rhs = row.pop().unwrap_or(0.0);
            row.resize(cols, 0.0);
            if needs_art[i] {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            } else {
                basis.push(nv + i);
            }
            row.push(rhs);
        }
        let mut tab = Tableau {
            t: rows,
            obj: Vec::new(),
            basis,
            cols,
            iterations: 0,
        };

        let dual_tol = 1e-10;
        if n_art > 0 {
            let mut phase1 = vec![0.0; cols];
            phase1[n_struct..].iter_mut().for_each(|c| *c = 1.0);
            tab.load_costs(&phase1);
            tab.run(cols, dual_tol, self.max_iterations)?;
            let infeas = -tab.obj[cols];
            let scale = 1.0 + tab.t.iter().map(|r| r[cols].abs()).fold(0.0, f64::max);
            if infeas > tol.min(1e-9) * scale {
                return Ok(LpSolution::infeasible(tab.iterations));
            }
            // Drive remaining artificials out of the basis or drop their rows.
            let mut r = 0;
            while r < tab.t.len() {
                if tab.basis[r] >= n_struct {
                    let q = (0..n_struct)
                        .filter(|&j| tab.t[r][j].abs() > 1e-9)
                        .max_by(|&a, &b| tab.t[r][a].abs().total_cmp(&tab.t[r][b].abs()));
                    match q {
                        Some(q) => {
                            tab.pivot(r, q);
                            r += 1;
                        }
                        None => {
                            tab.t.remove(r);
                            tab.basis.remove(r);
                        }
                    }
                } else {
                    r += 1;
                }
            }
        }

        let mut costs = problem.costs().to_vec();
        costs.resize(cols, 0.0);
        tab.load_costs(&costs);
        match tab.run(n_struct, dual_tol, self.max_iterations)? {
            Phase::Unbounded => Ok(LpSolution::unbounded(tab.iterations)),
            Phase::Optimal => {
                let mut x = vec![0.0; nv];
                for (r, &b) in tab.basis.iter().enumerate() {
                    if b < nv {
                        x[b] = tab.t[r][cols].max(0.0);
                    }
                }
                Ok(LpSolution::optimal(problem, x, tab.iterations))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::LpStatus;

    fn solve(lp: &LpProblem) -> LpSolution {
        DenseSimplex::default().solve(lp, 1e-9).unwrap()
    }

    #[test]
    fn classic_maximization() {
        // max 3x + 5y  s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  → (2, 6), value 36.
        let lp = LpProblem::from_dense(
            vec![-3.0, -5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            vec![4.0, 12.0, 18.0],
            &[],
            vec![],
        )
        .unwrap();
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value + 36.0).abs() < 1e-9);
        assert!((sol.x[0] - 2.0).abs() < 1e-9 && (sol.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn sign_contradiction_is_infeasible() {
        let lp = LpProblem::from_dense(vec![1.0], &[vec![1.0]], vec![-1.0], &[], vec![]).unwrap();
        assert_eq!(solve(&lp).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let lp =
            LpProblem::from_dense(vec![-1.0, 0.0], &[vec![-1.0, 1.0]], vec![1.0], &[], vec![])
                .unwrap();
        assert_eq!(solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_with_negative_rhs() {
        // x − y = −2, min x + y → (0, 2)
        let lp =
            LpProblem::from_dense(vec![1.0, 1.0], &[], vec![], &[vec![1.0, -1.0]], vec![-2.0])
                .unwrap();
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let lp = LpProblem::from_dense(
            vec![1.0, 2.0],
            &[],
            vec![],
            &[vec![1.0, 1.0], vec![2.0, 2.0]],
            vec![1.0, 2.0],
        )
        .unwrap();
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }
}

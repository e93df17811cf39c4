//! Sparse bounded dual simplex.
//!
//! The program is rewritten as `min cᵀx` over `l ≤ x ≤ u` with one logical
//! variable per row, `A x + s = 0`, so that `s = −a·x` carries the row
//! bounds. Inequality rows whose coefficients are exact negatives of each
//! other are merged into a single ranged row first. Starting from the
//! all-logical basis with every structural at its lower bound is dual
//! feasible whenever the costs are nonnegative, so no phase one is needed.
//!
//! The basis inverse is kept in product form (a file of eta vectors) and
//! rebuilt from scratch at regular intervals. Rows leave the basis by dual
//! steepest-edge pricing; the ratio test is the two-pass Harris test with a
//! bound-flipping pass over boxed variables.

use std::collections::HashMap;

use super::{LpProblem, LpSolution, LpSolver};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DualSimplex {
    pub max_iterations: usize,
    /// Number of basis changes between rebuilds of the eta file.
    pub refactor_interval: usize,
}

impl Default for DualSimplex {
    fn default() -> Self {
        DualSimplex {
            max_iterations: 500_000,
            refactor_interval: 40,
        }
    }
}

impl LpSolver for DualSimplex {
    fn name(&self) -> &'static str {
        "dual-simplex"
    }

    fn solve(&self, problem: &LpProblem, tol: f64) -> Result<LpSolution> {
        if let Some(j) = problem.costs().iter().position(|&c| c < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dual simplex needs nonnegative costs, cost {j} is {}",
                problem.costs()[j]
            )));
        }
        let model = BoundedModel::from_problem(problem);
        let mut engine = Engine::new(&model, tol, self.refactor_interval);
        match engine.run(self.max_iterations)? {
            Outcome::Optimal => {
                let x = engine.x[..model.n].iter().map(|v| v.max(0.0)).collect();
                Ok(LpSolution::optimal(problem, x, engine.iterations))
            }
            Outcome::Infeasible => Ok(LpSolution::infeasible(engine.iterations)),
        }
    }
}

/// Sparse column / row views of the constraint matrix plus bounds.
struct BoundedModel {
    m: usize,
    n: usize,
    col_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    col_val: Vec<f64>,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<f64>,
    /// Costs of structurals followed by zeros for logicals.
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Rows much denser than typical, such as coupling equalities.
    linking: Vec<bool>,
}

impl BoundedModel {
    fn from_problem(problem: &LpProblem) -> Self {
        let n = problem.num_vars();
        // Each merged row: coefficients and bounds on a·x.
        let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
        let mut by_pattern: HashMap<Vec<(usize, u64)>, Vec<usize>> = HashMap::new();
        for (row, &rhs) in problem.ineq().outer_iterator().zip(problem.ineq_rhs()) {
            let coeffs: Vec<(usize, f64)> = row.iter().map(|(j, &a)| (j, a)).collect();
            let negated: Vec<(usize, u64)> =
                coeffs.iter().map(|&(j, a)| (j, (-a).to_bits())).collect();
            if let Some(slot) = by_pattern.get_mut(&negated).and_then(|v| v.pop()) {
                // −a·x ≤ rhs  ⇔  a·x ≥ −rhs
                let lo = &mut rows[slot].1;
                *lo = lo.max(-rhs);
                continue;
            }
            let key: Vec<(usize, u64)> = coeffs.iter().map(|&(j, a)| (j, a.to_bits())).collect();
            by_pattern.entry(key).or_default().push(rows.len());
            rows.push((coeffs, f64::NEG_INFINITY, rhs));
        }
        for (row, &rhs) in problem.eq().outer_iterator().zip(problem.eq_rhs()) {
            rows.push((row.iter().map(|(j, &a)| (j, a)).collect(), rhs, rhs));
        }
        let m = rows.len();

        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::new();
        let mut row_val = Vec::new();
        row_ptr.push(0);
        let mut counts = vec![0usize; n];
        for (coeffs, _, _) in &rows {
            for &(j, a) in coeffs {
                row_idx.push(j);
                row_val.push(a);
                counts[j] += 1;
            }
            row_ptr.push(row_idx.len());
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let mut fill = col_ptr.clone();
        let mut col_idx = vec![0usize; row_idx.len()];
        let mut col_val = vec![0.0; row_idx.len()];
        for i in 0..m {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = row_idx[k];
                col_idx[fill[j]] = i;
                col_val[fill[j]] = row_val[k];
                fill[j] += 1;
            }
        }

        let mut cost = problem.costs().to_vec();
        cost.resize(n + m, 0.0);
        let mut lower = vec![0.0; n + m];
        let mut upper = vec![f64::INFINITY; n + m];
        for (i, (_, lo, hi)) in rows.iter().enumerate() {
            lower[n + i] = -hi;
            upper[n + i] = -lo;
        }
        let lengths: Vec<usize> = row_ptr.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted = lengths.clone();
        sorted.sort_unstable();
        let typical = sorted.get(m / 2).copied().unwrap_or(0).max(4);
        let linking = lengths.iter().map(|&len| len > 2 * typical).collect();
        BoundedModel {
            linking,
            m,
            n,
            col_ptr,
            col_idx,
            col_val,
            row_ptr,
            row_idx,
            row_val,
            cost,
            lower,
            upper,
        }
    }

    /// Calls `f(row, value)` for every nonzero of column `j` of `[A | I]`.
    #[inline]
    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                f(self.col_idx[k], self.col_val[k]);
            }
        } else {
            f(j - self.n, 1.0);
        }
    }

    fn column_nnz(&self, j: usize) -> usize {
        if j < self.n {
            self.col_ptr[j + 1] - self.col_ptr[j]
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

/// Product-form basis inverse stored as flat arrays.
#[derive(Default)]
struct EtaFile {
    row: Vec<usize>,
    pivot: Vec<f64>,
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl EtaFile {
    fn clear(&mut self) {
        self.row.clear();
        self.pivot.clear();
        self.start.clear();
        self.idx.clear();
        self.val.clear();
    }

    fn len(&self) -> usize {
        self.row.len()
    }

    fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.start[k]..self.start.get(k + 1).copied().unwrap_or(self.idx.len())
    }

    /// Appends the eta for `col` pivoting on `row`.
    fn push(&mut self, col: &[f64], row: usize) {
        self.row.push(row);
        self.pivot.push(col[row]);
        self.start.push(self.idx.len());
        for (i, &a) in col.iter().enumerate() {
            if a != 0.0 && i != row {
                self.idx.push(i);
                self.val.push(a);
            }
        }
    }

    fn ftran(&self, v: &mut [f64]) {
        for k in 0..self.len() {
            let r = self.row[k];
            let xr = v[r];
            if xr != 0.0 {
                let xr = xr / self.pivot[k];
                v[r] = xr;
                let range = self.range(k);
                for (&i, &a) in self.idx[range.clone()].iter().zip(&self.val[range]) {
                    v[i] -= a * xr;
                }
            }
        }
    }

    fn btran(&self, v: &mut [f64]) {
        for k in (0..self.len()).rev() {
            let r = self.row[k];
            let range = self.range(k);
            let mut s = v[r];
            for (&i, &a) in self.idx[range.clone()].iter().zip(&self.val[range]) {
                s -= a * v[i];
            }
            v[r] = s / self.pivot[k];
        }
    }
}

enum Outcome {
    Optimal,
    Infeasible,
}

/// A ratio-test candidate: variable, ratio `|d_j| / |α_j|`, `|α_j|`.
#[derive(Clone, Copy)]
struct Candidate {
    j: usize,
    ratio: f64,
    alpha: f64,
}

struct Engine<'a> {
    model: &'a BoundedModel,
    tol_primal: f64,
    tol_dual: f64,
    refactor_interval: usize,
    cost: Vec<f64>,
    head: Vec<usize>,
    state: Vec<State>,
    x: Vec<f64>,
    d: Vec<f64>,
    /// Dual steepest-edge weights per basis position.
    weight: Vec<f64>,
    etas: EtaFile,
    flips: Vec<usize>,
    cands: Vec<Candidate>,
    since_refactor: usize,
    iterations: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const NONE: usize = usize::MAX;

/// Deterministic value in `[0.5, 1)` used to break cost ties.
fn jitter(j: usize) -> f64 {
    let mut z = (j as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    0.5 + 0.5 * (z >> 11) as f64 / (1u64 << 53) as f64
}

impl<'a> Engine<'a> {
    fn new(model: &'a BoundedModel, tol: f64, refactor_interval: usize) -> Self {
        let (m, n) = (model.m, model.n);
        let cost: Vec<f64> = model
            .cost
            .iter()
            .enumerate()
            .map(|(j, &c)| if j < n { c + 1e-9 * (1.0 + c.abs()) * jitter(j) } else { c })
            .collect();
        let mut state = vec![State::AtLower; n + m];
        let mut head = Vec::with_capacity(m);
        for i in 0..m {
            state[n + i] = State::Basic;
            head.push(n + i);
        }
        let mut engine = Engine {
            model,
            tol_primal: (tol * 0.1).min(1e-9),
            tol_dual: 1e-10,
            refactor_interval: refactor_interval.max(1),
            d: cost.clone(),
            cost,
            head,
            state,
            x: vec![0.0; n + m],
            weight: vec![1.0; m],
            etas: EtaFile::default(),
            flips: Vec::new(),
            cands: Vec::new(),
            since_refactor: 0,
            iterations: 0,
        };
        engine.x[..n].copy_from_slice(&model.lower[..n]);
        engine.recompute_primal();
        engine
    }

    fn load_column(&self, j: usize, v: &mut [f64]) {
        v.iter_mut().for_each(|a| *a = 0.0);
        self.model.for_column(j, |i, a| v[i] = a);
    }

    /// `x_B = −B⁻¹ N x_N`.
    fn recompute_primal(&mut self) {
        let mut rhs = vec![0.0; self.model.m];
        for j in 0..self.model.n + self.model.m {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                self.model.for_column(j, |i, a| rhs[i] -= a * xj);
            }
        }
        self.etas.ftran(&mut rhs);
        for (pos, &var) in self.head.iter().enumerate() {
            self.x[var] = rhs[pos];
        }
    }

    /// `d = c − Aᵀ y` with `yᵀ = c_Bᵀ B⁻¹`.
    fn recompute_dual(&mut self) {
        let mut y: Vec<f64> = self.head.iter().map(|&v| self.cost[v]).collect();
        self.etas.btran(&mut y);
        for j in 0..self.model.n + self.model.m {
            if self.state[j] == State::Basic {
                self.d[j] = 0.0;
            } else {
                let mut dot = 0.0;
                self.model.for_column(j, |i, a| dot += a * y[i]);
                self.d[j] = self.cost[j] - dot;
            }
        }
    }

    /// Places structural `j` in the free row with the largest pivot,
    /// restricted to non-linking rows when `local`. Returns false when no
    /// acceptable pivot exists.
    fn place(&mut self, j: usize, local: bool, work: &mut [f64], free: &mut [bool], head: &mut [usize]) -> bool {
        self.load_column(j, work);
        self.etas.ftran(work);
        let (mut best, mut best_abs, mut overall) = (NONE, 0.0, 0.0f64);
        for (i, &a) in work.iter().enumerate() {
            if a != 0.0 && free[i] {
                overall = overall.max(a.abs());
                if !(local && self.model.linking[i]) && a.abs() > best_abs {
                    best_abs = a.abs();
                    best = i;
                }
            }
        }
        let acceptable = best != NONE && best_abs >= 1e-10 && (!local || best_abs >= 0.01 * overall);
        if acceptable {
            self.etas.push(work, best);
            head[best] = j;
            free[best] = false;
        }
        acceptable
    }

    /// Rebuilds the eta file for the current basis. Structural columns go
    /// into rows whose logical is nonbasic, sparsest columns first and away
    /// from dense linking rows where possible so that fill stays local.
    /// Columns that turn out dependent are swapped for logicals.
    fn refactor(&mut self) {
        let (m, n) = (self.model.m, self.model.n);
        let old_weight: HashMap<usize, f64> =
            self.head.iter().copied().zip(self.weight.iter().copied()).collect();
        self.etas.clear();
        let mut new_head = vec![NONE; m];
        let mut structs = Vec::new();
        for &v in &self.head {
            if v >= n {
                new_head[v - n] = v;
            } else {
                structs.push(v);
            }
        }
        structs.sort_by_key(|&j| (self.model.column_nnz(j), j));
        let mut free: Vec<bool> = new_head.iter().map(|&h| h == NONE).collect();
        let mut work = vec![0.0; m];
        let mut deferred = Vec::new();
        for j in structs {
            if !self.place(j, true, &mut work, &mut free, &mut new_head) {
                deferred.push(j);
            }
        }
        let mut dropped = Vec::new();
        for j in deferred {
            if !self.place(j, false, &mut work, &mut free, &mut new_head) {
                dropped.push(j);
            }
        }
        for (i, h) in new_head.iter_mut().enumerate() {
            if *h == NONE {
                *h = n + i;
                self.state[n + i] = State::Basic;
            }
        }
        let repaired = !dropped.is_empty();
        for j in dropped {
            self.state[j] = State::AtLower;
            self.x[j] = self.model.lower[j];
        }
        self.weight = new_head
            .iter()
            .map(|v| old_weight.get(v).copied().unwrap_or(1.0))
            .collect();
        if repaired {
            self.weight.iter_mut().for_each(|w| *w = 1.0);
        }
        self.head = new_head;
        self.since_refactor = 0;
        self.recompute_primal();
        self.recompute_dual();
        // Dual infeasibilities left by drift or a basis repair are removed by
        // shifting the working cost; the reported objective uses true costs.
        for j in 0..n + m {
            let bad = match self.state[j] {
                State::AtLower => self.d[j] < -self.tol_dual,
                State::AtUpper => self.d[j] > self.tol_dual,
                State::Basic => false,
            };
            if bad {
                self.cost[j] -= self.d[j];
                self.d[j] = 0.0;
            }
        }
    }

    fn infeasibility(&self, var: usize) -> f64 {
        let v = self.x[var];
        if v < self.model.lower[var] {
            self.model.lower[var] - v
        } else if v > self.model.upper[var] {
            v - self.model.upper[var]
        } else {
            0.0
        }
    }

    fn choose_leaving(&self) -> Option<usize> {
        let mut best = NONE;
        let mut best_score = 0.0;
        for (pos, &var) in self.head.iter().enumerate() {
            let inf = self.infeasibility(var);
            if inf > self.tol_primal {
                let score = inf * inf / self.weight[pos];
                if score > best_score {
                    best_score = score;
                    best = pos;
                }
            }
        }
        (best != NONE).then_some(best)
    }

    /// Row `r` of `B⁻¹[A | I]` for nonbasic columns, given `rho = e_rᵀB⁻¹`.
    fn pivot_row(&self, rho: &[f64], alpha: &mut [f64]) {
        let n = self.model.n;
        alpha.iter_mut().for_each(|a| *a = 0.0);
        for (i, &ri) in rho.iter().enumerate() {
            if ri != 0.0 {
                let range = self.model.row_ptr[i]..self.model.row_ptr[i + 1];
                for (&j, &a) in self.model.row_idx[range.clone()]
                    .iter()
                    .zip(&self.model.row_val[range])
                {
                    alpha[j] += ri * a;
                }
                alpha[n + i] = ri;
            }
        }
    }

    fn run(&mut self, max_iterations: usize) -> Result<Outcome> {
        let (m, n) = (self.model.m, self.model.n);
        let total = n + m;
        let mut alpha = vec![0.0; total];
        let mut rho = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut tau = vec![0.0; m];
        let mut delta = vec![0.0; m];
        let mut retried_infeasible = false;
        loop {
            if self.iterations >= max_iterations {
                return Err(Error::IterationLimit(max_iterations));
            }
            if self.since_refactor >= self.refactor_interval {
                self.refactor();
            }
            let Some(r) = self.choose_leaving() else {
                // Confirm on a fresh factorization before declaring optimality.
                if self.since_refactor == 0 {
                    return Ok(Outcome::Optimal);
                }
                self.refactor();
                continue;
            };
            let leaving = self.head[r];
            let to_lower = self.x[leaving] < self.model.lower[leaving];
            let target = if to_lower {
                self.model.lower[leaving]
            } else {
                self.model.upper[leaving]
            };
            // s = +1 when the leaving variable must increase.
            let s = if to_lower { 1.0 } else { -1.0 };

            rho.iter_mut().for_each(|v| *v = 0.0);
            rho[r] = 1.0;
            self.etas.btran(&mut rho);
            self.pivot_row(&rho, &mut alpha);

            let Some(q) = self.ratio_test(&alpha, s, (self.x[leaving] - target).abs()) else {
                if !retried_infeasible && self.since_refactor > 0 {
                    retried_infeasible = true;
                    self.refactor();
                    continue;
                }
                return Ok(Outcome::Infeasible);
            };
            retried_infeasible = false;

            self.load_column(q, &mut col);
            self.etas.ftran(&mut col);
            let alpha_q = col[r];
            if alpha_q.abs() < PIVOT_TOL || (alpha_q - alpha[q]).abs() > 1e-6 * (1.0 + alpha_q.abs())
            {
                // Row and column disagree: the eta file has drifted.
                if self.since_refactor == 0 {
                    return Err(Error::Numerical(format!(
                        "unstable pivot {alpha_q:.3e} at iteration {}",
                        self.iterations
                    )));
                }
                self.refactor();
                continue;
            }

            // Dual update.
            let theta_d = self.d[q] / alpha[q];
            for ((d, &a), &st) in self.d.iter_mut().zip(&alpha).zip(&self.state) {
                if a != 0.0 && st != State::Basic {
                    *d -= theta_d * a;
                }
            }
            self.d[q] = 0.0;
            self.d[leaving] = -theta_d;

            // Bound flips chosen by the ratio test shift the basic values.
            if !self.flips.is_empty() {
                delta.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..self.flips.len() {
                    let j = self.flips[k];
                    let (from, to, next) = match self.state[j] {
                        State::AtLower => (self.model.lower[j], self.model.upper[j], State::AtUpper),
                        _ => (self.model.upper[j], self.model.lower[j], State::AtLower),
                    };
                    self.state[j] = next;
                    self.x[j] = to;
                    let step = to - from;
                    self.model.for_column(j, |i, a| delta[i] -= a * step);
                }
                self.etas.ftran(&mut delta);
                for (pos, &var) in self.head.iter().enumerate() {
                    self.x[var] += delta[pos];
                }
            }

            // Primal update.
            let step = (self.x[leaving] - target) / alpha_q;
            for (pos, &var) in self.head.iter().enumerate() {
                if col[pos] != 0.0 {
                    self.x[var] -= step * col[pos];
                }
            }
            self.x[q] += step;
            self.x[leaving] = target;

            // Steepest-edge weight update.
            tau.copy_from_slice(&rho);
            self.etas.ftran(&mut tau);
            let beta_r = self.weight[r];
            for i in 0..m {
                if i == r || col[i] == 0.0 {
                    continue;
                }
                let ratio = col[i] / alpha_q;
                let w = self.weight[i] - 2.0 * ratio * tau[i] + ratio * ratio * beta_r;
                self.weight[i] = w.max(1e-4 * self.weight[i]).max(1e-12);
            }
            self.weight[r] = (beta_r / (alpha_q * alpha_q)).max(1e-12);

            // Basis change.
            self.etas.push(&col, r);
            self.head[r] = q;
            self.state[q] = State::Basic;
            self.state[leaving] = if to_lower { State::AtLower } else { State::AtUpper };
            self.iterations += 1;
            self.since_refactor += 1;
        }
    }

    /// Harris two-pass ratio test with bound flipping. Returns the entering
    /// variable and leaves the boxed variables to flip in `self.flips`.
    fn ratio_test(&mut self, alpha: &[f64], s: f64, infeasibility: f64) -> Option<usize> {
        self.flips.clear();
        let mut cands = std::mem::take(&mut self.cands);
        cands.clear();
        // Smallest ratio among candidates that cannot flip.
        let mut hard = f64::INFINITY;
        for (j, &a) in alpha.iter().enumerate() {
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let dj = match self.state[j] {
                State::Basic => continue,
                State::AtLower if s * a < 0.0 => self.d[j].max(0.0),
                State::AtUpper if s * a > 0.0 => (-self.d[j]).max(0.0),
                _ => continue,
            };
            let (lo, hi) = (self.model.lower[j], self.model.upper[j]);
            if lo == hi {
                continue;
            }
            let ratio = dj / a.abs();
            if !(hi - lo).is_finite() {
                hard = hard.min(ratio);
            }
            cands.push(Candidate {
                j,
                ratio,
                alpha: a.abs(),
            });
        }
        if cands.is_empty() {
            self.cands = cands;
            return None;
        }

        // Bound flipping: pass boxed breakpoints below the first hard one
        // while the leaving row stays infeasible after the flips.
        let mut boxed: Vec<usize> = (0..cands.len())
            .filter(|&k| {
                let j = cands[k].j;
                (self.model.upper[j] - self.model.lower[j]).is_finite() && cands[k].ratio < hard
            })
            .collect();
        boxed.sort_by(|&a, &b| {
            cands[a].ratio.total_cmp(&cands[b].ratio).then(cands[a].j.cmp(&cands[b].j))
        });
        let mut slope = infeasibility;
        let mut passed = 0;
        for &k in &boxed {
            let c = cands[k];
            let width = self.model.upper[c.j] - self.model.lower[c.j];
            let next = slope - width * c.alpha;
            if next <= 0.0 {
                break;
            }
            slope = next;
            passed += 1;
        }
        if passed == cands.len() {
            // Every candidate can be flipped and the row is still infeasible.
            self.cands = cands;
            return None;
        }
        let mut flipped = vec![false; cands.len()];
        for &k in &boxed[..passed] {
            flipped[k] = true;
        }

        // Harris pass among the candidates that were not flipped.
        let mut bound = f64::INFINITY;
        for (k, c) in cands.iter().enumerate() {
            if !flipped[k] {
                let slack = c.ratio + self.tol_dual / c.alpha;
                bound = bound.min(slack);
            }
        }
        let mut chosen: Option<Candidate> = None;
        for (k, c) in cands.iter().enumerate() {
            if !flipped[k] && c.ratio <= bound && chosen.map_or(true, |b| c.alpha > b.alpha) {
                chosen = Some(*c);
            }
        }
        let chosen = chosen.expect("at least one candidate remains");
        for &k in &boxed[..passed] {
            if cands[k].ratio <= chosen.ratio {
                self.flips.push(cands[k].j);
            }
        }
        self.cands = cands;
        Some(chosen.j)
    }
}

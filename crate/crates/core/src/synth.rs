//! Synthetic confounded data: sparse anchor precision matrices, a linearly
//! interpolated path between them indexed by the confounder, and Gaussian
//! draws from each matrix on the path.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{elementwise_inf, same_order, validate_dataset, Dataset, SquareMatrix};
use crate::error::{Error, Result};
use crate::eval::min_eigenvalue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub p: usize,
    pub n_anchors: usize,
    pub steps_between: usize,
    pub samples_per_matrix: usize,
    pub nonzero_prob: f64,
    /// Magnitude range of nonzero off-diagonal anchor entries; signs are random.
    pub value_range: (f64, f64),
    pub spd_margin: f64,
    /// Off-diagonal entries of the averaged path below
    /// `threshold_fraction · max|entry|` are zeroed to form the target.
    pub threshold_fraction: f64,
    /// When set, the path is evaluated at this many equally spaced points
    /// of `[0, 1]` instead of at the interpolation steps.
    pub grid_points: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            p: 10,
            n_anchors: 11,
            steps_between: 10,
            samples_per_matrix: 2,
            nonzero_prob: 0.2,
            value_range: (0.3, 0.8),
            spd_margin: 0.5,
            threshold_fraction: 0.05,
            grid_points: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.p < 2 {
            return Err(Error::TooFewVariables(self.p));
        }
        if self.n_anchors < 2 {
            return bad(format!("need at least 2 anchors, got {}", self.n_anchors));
        }
        if self.steps_between == 0 {
            return bad("steps_between must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.nonzero_prob) {
            return bad(format!("nonzero_prob {} outside [0, 1]", self.nonzero_prob));
        }
        let (lo, hi) = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return bad(format!("invalid value range ({lo}, {hi})"));
        }
        if !(self.spd_margin > 0.0) {
            return bad(format!("spd_margin must be positive, got {}", self.spd_margin));
        }
        if !(self.threshold_fraction >= 0.0) {
            return bad("threshold_fraction must be nonnegative".into());
        }
        if matches!(self.grid_points, Some(g) if g < 2) {
            return bad("grid_points must be at least 2".into());
        }
        Ok(())
    }
}

/// Sparse symmetric anchor made diagonally dominant by `spd_margin`.
pub fn generate_anchor(p: usize, config: &SynthConfig, rng: &mut impl Rng) -> SquareMatrix {
    let (lo, hi) = config.value_range;
    let mut a = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in (j + 1)..p {
            if rng.gen_bool(config.nonzero_prob) {
                let mag = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                let v = if rng.gen_bool(0.5) { mag } else { -mag };
                a[(j, k)] = v;
                a[(k, j)] = v;
            }
        }
    }
    for j in 0..p {
        let off: f64 = (0..p).filter(|&k| k != j).map(|k| a[(j, k)].abs()).sum();
        a[(j, j)] = off + config.spd_margin;
    }
    SquareMatrix::from_unchecked(a)
}

fn check_pd(m: &SquareMatrix, what: &str) -> Result<()> {
    if Cholesky::new(m.as_matrix().clone()).is_none() {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Ok(())
}

/// `A + (t/steps)(B − A)` for `t = 0..steps` between consecutive anchors,
/// followed by the last anchor.
pub fn interpolate_path(anchors: &[SquareMatrix], steps_between: usize) -> Result<Vec<SquareMatrix>> {
    if anchors.len() < 2 {
        return Err(Error::InvalidConfig("need at least 2 anchors".into()));
    }
    if steps_between == 0 {
        return Err(Error::InvalidConfig("steps_between must be positive".into()));
    }
    for a in &anchors[1..] {
        same_order(&anchors[0], a)?;
    }
    let mut path = Vec::with_capacity((anchors.len() - 1) * steps_between + 1);
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0].as_matrix(), pair[1].as_matrix());
        for t in 0..steps_between {
            let f = t as f64 / steps_between as f64;
            path.push(SquareMatrix::from_unchecked(a + (b - a) * f));
        }
    }
    path.push(anchors[anchors.len() - 1].clone());
    for (i, m) in path.iter().enumerate() {
        check_pd(m, &format!("path matrix {i}"))?;
    }
    Ok(path)
}

/// Piecewise-linear path through equally spaced anchors, evaluated at
/// `g ∈ [0, 1]`.
pub fn path_at(anchors: &[SquareMatrix], g: f64) -> SquareMatrix {
    let segments = anchors.len() - 1;
    let pos = g.clamp(0.0, 1.0) * segments as f64;
    let k = (pos.floor() as usize).min(segments - 1);
    let f = pos - k as f64;
    let (a, b) = (anchors[k].as_matrix(), anchors[k + 1].as_matrix());
    SquareMatrix::from_unchecked(a + (b - a) * f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub dataset: Dataset,
    pub true_path: Vec<SquareMatrix>,
    /// Confounder value of each matrix on `true_path`.
    pub path_confounders: Vec<f64>,
    /// Index into `true_path` of every observation.
    pub sample_matrix: Vec<usize>,
    pub target: SquareMatrix,
}

impl SynthInstance {
    /// True covariance `Ω(g^i)⁻¹` behind observation `i`.
    pub fn true_covariance(&self, i: usize) -> SquareMatrix {
        let omega = self.true_path[self.sample_matrix[i]].as_matrix().clone();
        let inv = Cholesky::new(omega)
            .expect("path matrices are positive definite")
            .inverse();
        SquareMatrix::from_unchecked((&inv + inv.transpose()) * 0.5)
    }
}

/// Zeroes off-diagonal entries with magnitude below `threshold`.
pub fn threshold_offdiagonal(a: &SquareMatrix, threshold: f64) -> SquareMatrix {
    let mut out = a.as_matrix().clone();
    let p = a.order();
    for j in 0..p {
        for k in 0..p {
            if j != k && out[(j, k)].abs() < threshold {
                out[(j, k)] = 0.0;
            }
        }
    }
    SquareMatrix::from_unchecked(out)
}

pub fn sample_instance(config: &SynthConfig) -> Result<SynthInstance> {
    config.validate()?;
    let p = config.p;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anchors: Vec<SquareMatrix> = (0..config.n_anchors)
        .map(|_| generate_anchor(p, config, &mut rng))
        .collect();
    let (true_path, path_confounders) = match config.grid_points {
        None => {
            let path = interpolate_path(&anchors, config.steps_between)?;
            let last = (path.len() - 1) as f64;
            let g = (0..path.len()).map(|i| i as f64 / last).collect();
            (path, g)
        }
        Some(points) => {
            let g: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
            let path = g.iter().map(|&gi| path_at(&anchors, gi)).collect();
            (path, g)
        }
    };
    for (i, m) in true_path.iter().enumerate() {
        let floor = min_eigenvalue(m);
        if floor < 0.5 * config.spd_margin {
            return Err(Error::NotPositiveDefinite(format!(
                "path matrix {i} has minimum eigenvalue {floor}"
            )));
        }
    }

    let n = true_path.len() * config.samples_per_matrix;
    let mut samples = DMatrix::zeros(n, p);
    let mut confounders = Vec::with_capacity(n);
    let mut sample_matrix = Vec::with_capacity(n);
    let mut row = 0;
    for (i, omega) in true_path.iter().enumerate() {
        let chol = Cholesky::new(omega.as_matrix().clone())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("path matrix {i}")))?;
        let lt = chol.l().transpose();
        for _ in 0..config.samples_per_matrix {
            let eps = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            // Ω = L Lᵀ and Lᵀ z = ε give Cov(z) = Ω⁻¹.
            let z = lt
                .solve_upper_triangular(&eps)
                .ok_or_else(|| Error::NotPositiveDefinite(format!("path matrix {i}")))?;
            samples.row_mut(row).copy_from(&z.transpose());
            confounders.push(path_confounders[i]);
            sample_matrix.push(i);
            row += 1;
        }
    }
    let dataset = validate_dataset(samples, confounders)?;

    let mut mean = DMatrix::zeros(p, p);
    for m in &true_path {
        mean += m.as_matrix();
    }
    mean /= true_path.len() as f64;
    let mean = SquareMatrix::from_unchecked(mean);
    let target = threshold_offdiagonal(&mean, config.threshold_fraction * elementwise_inf(&mean));
    Ok(SynthInstance {
        dataset,
        true_path,
        path_confounders,
        sample_matrix,
        target,
    })
}

/// `Σ_jk (estimate − target)²_jk`.
pub fn squared_error(estimate: &SquareMatrix, target: &SquareMatrix) -> Result<f64> {
    same_order(estimate, target)?;
    Ok(estimate
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub median_error: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProbe {
    pub rows: Vec<RateRow>,
    /// Slope of `log(median error)` against `log n`; NaN when some median
    /// error is zero.
    pub slope: f64,
}

/// Points on the confounder grid used by [`rate_probe`]; every sample size
/// must be a multiple of it.
pub const RATE_GRID_POINTS: usize = 100;

/// Median elementwise-∞ error of `estimator` per sample size, on instances
/// with a fixed 100-point confounder grid, `n / 100` draws per grid point
/// and an unthresholded target.
pub fn rate_probe(
    n_grid: &[usize],
    p: usize,
    seeds: &[u64],
    estimator: &dyn Fn(&SynthInstance) -> Result<SquareMatrix>,
) -> Result<RateProbe> {
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("n_grid must be increasing with at least 3 points".into()));
    }
    if let Some(n) = n_grid.iter().find(|&&n| n % RATE_GRID_POINTS != 0 || n == 0) {
        return Err(Error::InvalidConfig(format!(
            "sample size {n} is not a positive multiple of {RATE_GRID_POINTS}"
        )));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut errors = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = SynthConfig {
                p,
                samples_per_matrix: n / RATE_GRID_POINTS,
                threshold_fraction: 0.0,
                grid_points: Some(RATE_GRID_POINTS),
                seed,
                ..SynthConfig::default()
            };
            let inst = sample_instance(&config)?;
            let est = estimator(&inst)?;
            errors.push(elementwise_inf(&est.sub(&inst.target)?));
        }
        rows.push(RateRow {
            n,
            median_error: median(&errors),
            errors,
        });
    }
    let slope = if rows.iter().all(|r| r.median_error > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.median_error.ln()).collect();
        fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(RateProbe { rows, slope })
}

//! Kernel-weighted local second moments `S(g) = Σ w_i(g) z^i z^iᵀ / Σ w_i(g)`
//! and leave-one-out bandwidth selection.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SquareMatrix};
use crate::error::{Error, Result};

/// Symmetric kernels supported on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
    Uniform,
}

impl Kernel {
    pub fn eval(self, x: f64) -> f64 {
        let a = x.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
            Kernel::Triangular => 1.0 - a,
            Kernel::Uniform => 0.5,
        }
    }
}

pub fn kernel_eval(kernel: Kernel, x: f64) -> f64 {
    kernel.eval(x)
}

/// One bandwidth for every entry, or a symmetric matrix of per-entry values.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    Scalar(f64),
    PerEntry(SquareMatrix),
}

impl Bandwidth {
    /// Bandwidth used for entry `(j, k)`.
    pub fn at(&self, j: usize, k: usize) -> f64 {
        match self {
            Bandwidth::Scalar(h) => *h,
            Bandwidth::PerEntry(m) => m[(j, k)],
        }
    }

    fn validate(&self, p: Option<usize>) -> Result<()> {
        match self {
            Bandwidth::Scalar(h) => {
                if !(h.is_finite() && *h > 0.0) {
                    return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
                }
            }
            Bandwidth::PerEntry(m) => {
                if let Some(p) = p {
                    if m.order() != p {
                        return Err(Error::DimensionMismatch(format!(
                            "bandwidth matrix of order {} for {p} variables",
                            m.order()
                        )));
                    }
                }
                if m.iter().any(|h| !(*h > 0.0)) {
                    return Err(Error::InvalidConfig("bandwidths must be positive".into()));
                }
                if !m.is_symmetric() {
                    return Err(Error::NotSymmetric(m.asymmetry()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    /// Subtract the kernel-weighted local mean before forming outer products.
    pub center: bool,
}

impl KernelConfig {
    pub fn new(kernel: Kernel, bandwidth: Bandwidth, center: bool) -> Result<Self> {
        bandwidth.validate(None)?;
        Ok(KernelConfig {
            kernel,
            bandwidth,
            center,
        })
    }

    pub fn epanechnikov(h: f64) -> Result<Self> {
        Self::new(Kernel::Epanechnikov, Bandwidth::Scalar(h), false)
    }
}

/// Normalized kernel weights at `g` for bandwidth `h`.
pub fn weights_with(g: f64, confounders: &[f64], kernel: Kernel, h: f64) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = confounders
        .iter()
        .map(|&gi| kernel.eval((gi - g).abs() / h))
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyWindow {
            g,
            bandwidth: h,
            index: None,
        });
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Weights `W(g)` for a scalar bandwidth. With per-entry bandwidths the
/// diagonal bandwidth of the first variable is used.
pub fn weights(g: f64, dataset: &Dataset, config: &KernelConfig) -> Result<Vec<f64>> {
    weights_with(g, dataset.confounders(), config.kernel, config.bandwidth.at(0, 0))
}

pub fn local_covariance(g: f64, dataset: &Dataset, config: &KernelConfig) -> Result<SquareMatrix> {
    config.bandwidth.validate(Some(dataset.p()))?;
    let mut cache = HashMap::new();
    local_covariance_cached(g, dataset, config, &mut cache)
}

fn local_covariance_cached(
    g: f64,
    dataset: &Dataset,
    config: &KernelConfig,
    cache: &mut HashMap<u64, Vec<f64>>,
) -> Result<SquareMatrix> {
    let p = dataset.p();
    let z = dataset.samples();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let h = config.bandwidth.at(j, k);
            let w = match cache.get(&h.to_bits()) {
                Some(w) => w,
                None => {
                    let w = weights_with(g, dataset.confounders(), config.kernel, h)?;
                    cache.entry(h.to_bits()).or_insert(w)
                }
            };
            let mut s = 0.0;
            let (mut mj, mut mk) = (0.0, 0.0);
            for (i, &wi) in w.iter().enumerate() {
                if wi != 0.0 {
                    s += wi * z[(i, j)] * z[(i, k)];
                    mj += wi * z[(i, j)];
                    mk += wi * z[(i, k)];
                }
            }
            if config.center {
                s -= mj * mk;
            }
            out[(j, k)] = s;
            out[(k, j)] = s;
        }
    }
    Ok(SquareMatrix::from_unchecked(out))
}

/// The matrices `S^i = S(g^i)` with the confounder values they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovariances {
    matrices: Vec<SquareMatrix>,
    at_confounders: Vec<f64>,
}

impl LocalCovariances {
    pub fn new(matrices: Vec<SquareMatrix>, at_confounders: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if matrices.len() != at_confounders.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices but {} confounder values",
                matrices.len(),
                at_confounders.len()
            )));
        }
        let p = matrices[0].order();
        if p < 2 {
            return Err(Error::TooFewVariables(p));
        }
        if matrices.iter().any(|m| m.order() != p) {
            return Err(Error::DimensionMismatch("local covariances differ in order".into()));
        }
        Ok(LocalCovariances {
            matrices,
            at_confounders,
        })
    }

    /// A single matrix, as used by CLIME.
    pub fn single(s: SquareMatrix) -> Result<Self> {
        Self::new(vec![s], vec![0.0])
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn order(&self) -> usize {
        self.matrices[0].order()
    }

    pub fn matrices(&self) -> &[SquareMatrix] {
        &self.matrices
    }

    pub fn at_confounders(&self) -> &[f64] {
        &self.at_confounders
    }
}

pub fn all_local_covariances(dataset: &Dataset, config: &KernelConfig) -> Result<LocalCovariances> {
    config.bandwidth.validate(Some(dataset.p()))?;
    let mut by_point: HashMap<u64, SquareMatrix> = HashMap::new();
    let mut matrices = Vec::with_capacity(dataset.n());
    for (i, &g) in dataset.confounders().iter().enumerate() {
        let key = g.to_bits();
        if let Some(s) = by_point.get(&key) {
            matrices.push(s.clone());
            continue;
        }
        let mut cache = HashMap::new();
        let s = local_covariance_cached(g, dataset, config, &mut cache).map_err(|e| match e {
            Error::EmptyWindow { g, bandwidth, .. } => Error::EmptyWindow {
                g,
                bandwidth,
                index: Some(i),
            },
            other => other,
        })?;
        by_point.insert(key, s.clone());
        matrices.push(s);
    }
    LocalCovariances::new(matrices, dataset.confounders().to_vec())
}

/// `c · sd(g) · n^(−1/5)`, the scale on which CV grids are centered.
pub fn default_bandwidth(confounders: &[f64], c: f64) -> f64 {
    let n = confounders.len() as f64;
    let mean = confounders.iter().sum::<f64>() / n;
    let var = confounders.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    c * var.sqrt() * n.powf(-0.2)
}

/// Multiples of [`default_bandwidth`] with `c = 1`.
pub fn bandwidth_grid(confounders: &[f64], factors: &[f64]) -> Vec<f64> {
    let base = default_bandwidth(confounders, 1.0);
    factors.iter().map(|f| f * base).collect()
}

/// Leave-one-out scores `Σ_i (z_ij z_ik − S^{(−i)}_jk(g^i))²` for one
/// bandwidth, as a `p × p` matrix. `None` when some held-out window is empty.
pub fn loo_scores(dataset: &Dataset, kernel: Kernel, h: f64) -> Option<DMatrix<f64>> {
    let (n, p) = (dataset.n(), dataset.p());
    let z = dataset.samples();
    let g = dataset.confounders();
    let mut scores = DMatrix::zeros(p, p);
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut total = 0.0;
        for l in 0..n {
            w[l] = if l == i { 0.0 } else { kernel.eval((g[l] - g[i]).abs() / h) };
            total += w[l];
        }
        if !(total > 0.0) {
            return None;
        }
        for j in 0..p {
            for k in j..p {
                let mut s = 0.0;
                for l in 0..n {
                    if w[l] != 0.0 {
                        s += w[l] * z[(l, j)] * z[(l, k)];
                    }
                }
                let r = z[(i, j)] * z[(i, k)] - s / total;
                scores[(j, k)] += r * r;
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            scores[(j, k)] = scores[(k, j)];
        }
    }
    Some(scores)
}

/// Grid minimizer of the leave-one-out score, ties going to the smaller
/// bandwidth. With `per_entry` each entry `(j, k)`, diagonal included, is
/// chosen separately.
pub fn select_bandwidth_cv(
    dataset: &Dataset,
    candidate_grid: &[f64],
    per_entry: bool,
    kernel: Kernel,
) -> Result<Bandwidth> {
    if candidate_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(h) = candidate_grid.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
    }
    if dataset.n() < 3 {
        return Err(Error::TooFewSamples(dataset.n()));
    }
    let p = dataset.p();
    let mut grid = candidate_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let z = dataset.samples();
    let scale: f64 = (0..dataset.n())
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..p {
                for k in j..p {
                    acc += (z[(i, j)] * z[(i, k)]).powi(2);
                }
            }
            acc
        })
        .sum();
    let slack = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let scored: Vec<(f64, DMatrix<f64>)> = grid
        .iter()
        .filter_map(|&h| loo_scores(dataset, kernel, h).map(|s| (h, s)))
        .collect();
    if scored.is_empty() {
        return Err(Error::NoFeasibleBandwidth);
    }

    let pick = |score: &dyn Fn(&DMatrix<f64>) -> f64| -> f64 {
        let mut best = (scored[0].0, score(&scored[0].1));
        for (h, s) in &scored[1..] {
            let v = score(s);
            if v < best.1 - slack {
                best = (*h, v);
            }
        }
        best.0
    };

    if !per_entry {
        let total = |s: &DMatrix<f64>| {
            let mut acc = 0.0;
            for j in 0..p {
                for k in j..p {
                    acc += s[(j, k)];
                }
            }
            acc
        };
        return Ok(Bandwidth::Scalar(pick(&total)));
    }
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let h = pick(&|s: &DMatrix<f64>| s[(j, k)]);
            m[(j, k)] = h;
            m[(k, j)] = h;
        }
    }
    Ok(Bandwidth::PerEntry(SquareMatrix::from_unchecked(m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: &[Vec<f64>], g: &[f64]) -> Dataset {
        Dataset::from_rows(rows, g.to_vec()).unwrap()
    }

    #[test]
    fn epanechnikov_values() {
        assert_eq!(kernel_eval(Kernel::Epanechnikov, 1.0), 0.0);
        assert_eq!(kernel_eval(Kernel::Epanechnikov, 0.0), 0.75);
        assert_eq!(kernel_eval(Kernel::Epanechnikov, -0.5), 0.5625);
        assert_eq!(kernel_eval(Kernel::Triangular, 0.25), 0.75);
        assert_eq!(kernel_eval(Kernel::Uniform, 2.0), 0.0);
    }

    #[test]
    fn equal_confounders_give_uniform_weights() {
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], &[0.3; 3]);
        let w = weights(0.3, &d, &KernelConfig::epanechnikov(0.1).unwrap()).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn far_neighbour_gets_no_weight() {
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 1.0]);
        let w = weights(0.0, &d, &KernelConfig::epanechnikov(0.5).unwrap()).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn empty_window() {
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.1]);
        let err = weights(5.0, &d, &KernelConfig::epanechnikov(0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow { .. }));
    }

    #[test]
    fn single_sample_outer_product() {
        let d = ds(&[vec![2.0, -1.0]], &[0.0]);
        let s = local_covariance(0.0, &d, &KernelConfig::epanechnikov(1.0).unwrap()).unwrap();
        assert_eq!(s.as_slice(), &[4.0, -2.0, -2.0, 1.0]);
    }

    #[test]
    fn hand_weighted_sum() {
        // Triangular kernel, h = 1.5: w = (1, 1/3) at g = 0 → W = (0.75, 0.25).
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[0.0, 1.0]);
        let cfg = KernelConfig::new(Kernel::Triangular, Bandwidth::Scalar(1.5), false).unwrap();
        let w = weights(0.0, &d, &cfg).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let s = local_covariance(0.0, &d, &cfg).unwrap();
        let expected = [0.75, 0.0, 0.0, 1.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn wide_uniform_window_is_pooled_moment() {
        let d = ds(
            &[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.7]],
            &[0.0, 0.5, 1.0],
        );
        let cfg = KernelConfig::new(Kernel::Uniform, Bandwidth::Scalar(100.0), false).unwrap();
        let covs = all_local_covariances(&d, &cfg).unwrap();
        let pooled = d.second_moment();
        for s in covs.matrices() {
            for (a, b) in s.iter().zip(pooled.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn centered_covariance_subtracts_local_mean() {
        let d = ds(&[vec![1.0, 1.0], vec![3.0, 3.0]], &[0.0, 0.0]);
        let cfg = KernelConfig::new(Kernel::Uniform, Bandwidth::Scalar(1.0), true).unwrap();
        let s = local_covariance(0.0, &d, &cfg).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn per_entry_bandwidth_uses_entry_weights() {
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[0.0, 1.0]);
        let hm = SquareMatrix::from_row_slice(2, &[0.5, 10.0, 10.0, 10.0]).unwrap();
        let cfg = KernelConfig::new(Kernel::Uniform, Bandwidth::PerEntry(hm), false).unwrap();
        let s = local_covariance(0.0, &d, &cfg).unwrap();
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 1)], 2.0);
    }

    #[test]
    fn asymmetric_bandwidth_matrix_rejected() {
        let hm = SquareMatrix::from_row_slice(2, &[1.0, 1.0, 2.0, 1.0]).unwrap();
        let err = KernelConfig::new(Kernel::Uniform, Bandwidth::PerEntry(hm), false).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn cv_single_candidate() {
        let d = ds(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], &[0.0, 0.5, 1.0]);
        let h = select_bandwidth_cv(&d, &[0.8], false, Kernel::Epanechnikov).unwrap();
        assert_eq!(h, Bandwidth::Scalar(0.8));
    }

    #[test]
    fn cv_constant_samples_pick_smallest() {
        let d = ds(&vec![vec![1.0, 2.0]; 5], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let h = select_bandwidth_cv(&d, &[2.0, 0.6, 1.0], false, Kernel::Epanechnikov).unwrap();
        assert_eq!(h, Bandwidth::Scalar(0.6));
    }

    #[test]
    fn cv_errors() {
        let d = ds(&vec![vec![1.0, 2.0]; 3], &[0.0, 5.0, 10.0]);
        assert_eq!(
            select_bandwidth_cv(&d, &[], false, Kernel::Epanechnikov),
            Err(Error::EmptyGrid)
        );
        assert_eq!(
            select_bandwidth_cv(&d, &[0.1, 0.2], false, Kernel::Epanechnikov),
            Err(Error::NoFeasibleBandwidth)
        );
    }

    #[test]
    fn default_bandwidth_scale() {
        let g: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let sd = (g.iter().map(|v| (v - 15.5f64).powi(2)).sum::<f64>() / 31.0).sqrt();
        assert!((default_bandwidth(&g, 2.0) - 2.0 * sd / 2.0).abs() < 1e-12);
    }

    fn dataset_strategy() -> impl Strategy<Value = Dataset> {
        (2usize..5, 1usize..8).prop_flat_map(|(p, n)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * p),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(z, g)| {
                    let rows: Vec<Vec<f64>> = z.chunks(p).map(<[f64]>::to_vec).collect();
                    Dataset::from_rows(&rows, g).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn weights_form_a_simplex(d in dataset_strategy(), h in 0.05f64..2.0) {
            let cfg = KernelConfig::epanechnikov(h).unwrap();
            for &g in d.confounders() {
                let w = weights(g, &d, &cfg).unwrap();
                prop_assert!(w.iter().all(|&v| v >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn local_covariances_are_exactly_symmetric(d in dataset_strategy(), h in 0.05f64..2.0, center: bool) {
            let cfg = KernelConfig::new(Kernel::Triangular, Bandwidth::Scalar(h), center).unwrap();
            let covs = all_local_covariances(&d, &cfg).unwrap();
            for s in covs.matrices() {
                prop_assert!(s.is_symmetric());
            }
        }
    }
}

use jne_core::kernel::{
    all_local_covariances, local_covariance, select_bandwidth_cv, Bandwidth, Kernel, KernelConfig,
};
use jne_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn epanechnikov(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let g = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    Dataset::from_rows(&rows, g).unwrap()
}

#[test]
fn three_point_grid_matches_direct_sum() {
    let rows = vec![vec![1.0, -0.5], vec![0.3, 2.0], vec![-1.2, 0.7]];
    let g = vec![0.0, 0.5, 1.0];
    let data = Dataset::from_rows(&rows, g.clone()).unwrap();
    let covs = all_local_covariances(&data, &KernelConfig::epanechnikov(0.6).unwrap()).unwrap();
    for (i, s) in covs.matrices().iter().enumerate() {
        let w: Vec<f64> = g.iter().map(|gl| epanechnikov((gl - g[i]) / 0.6)).collect();
        let total: f64 = w.iter().sum();
        for j in 0..2 {
            for k in 0..2 {
                let expected: f64 =
                    (0..3).map(|l| w[l] * rows[l][j] * rows[l][k]).sum::<f64>() / total;
                assert!((s[(j, k)] - expected).abs() < 1e-14);
            }
        }
    }
}

fn brute_force_scores(data: &Dataset, h: f64) -> Vec<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    let config = KernelConfig::epanechnikov(h).unwrap();
    let mut scores = vec![vec![0.0; p]; p];
    for i in 0..n {
        let rest: Vec<usize> = (0..n).filter(|&l| l != i).collect();
        let held = data.select(&rest).unwrap();
        let s = local_covariance(data.confounders()[i], &held, &config).unwrap();
        let z = data.sample(i);
        for j in 0..p {
            for k in 0..p {
                scores[j][k] += (z[j] * z[k] - s[(j, k)]).powi(2);
            }
        }
    }
    scores
}

#[test]
fn cross_validation_matches_brute_force() {
    let grid = [0.3, 0.5, 0.8, 1.5];
    for seed in 0..5 {
        let data = random_dataset(6, 2, seed);
        let all: Vec<Vec<Vec<f64>>> = grid.iter().map(|&h| brute_force_scores(&data, h)).collect();
        let best = |j: usize, k: usize| {
            let mut arg = 0;
            for c in 1..grid.len() {
                if all[c][j][k] < all[arg][j][k] {
                    arg = c;
                }
            }
            grid[arg]
        };
        let total = |c: usize| -> f64 {
            (0..2).flat_map(|j| (j..2).map(move |k| (j, k))).map(|(j, k)| all[c][j][k]).sum()
        };
        let scalar = (0..grid.len()).min_by(|&a, &b| total(a).total_cmp(&total(b))).unwrap();
        match select_bandwidth_cv(&data, &grid, false, Kernel::Epanechnikov).unwrap() {
            Bandwidth::Scalar(h) => assert_eq!(h, grid[scalar]),
            other => panic!("expected scalar, got {other:?}"),
        }
        let per_entry = select_bandwidth_cv(&data, &grid, true, Kernel::Epanechnikov).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert_eq!(per_entry.at(j, k), best(j, k));
            }
        }
    }
}

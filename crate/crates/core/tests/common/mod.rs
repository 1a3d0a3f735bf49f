#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tknn_core::{Dataset, DistanceMetric, LabeledPoint};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A nonzero feature vector; integer grids produce exact ties.
pub fn random_features(r: &mut ChaCha8Rng, dim: usize, grid: bool) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim)
            .map(|_| {
                if grid {
                    r.random_range(-2i32..=2) as f64
                } else {
                    r.random_range(-1.0..1.0)
                }
            })
            .collect();
        if x.iter().any(|&v| v != 0.0) {
            return x;
        }
    }
}

pub struct Instance {
    pub train: Dataset,
    pub validation: Vec<LabeledPoint>,
    pub metric: DistanceMetric,
    pub tau: f64,
}

impl Instance {
    pub fn validation_set(&self) -> Dataset {
        Dataset::from_points(&self.validation, self.train.dim(), self.train.num_classes()).unwrap()
    }
}

pub fn random_metric(r: &mut ChaCha8Rng) -> DistanceMetric {
    if r.random_bool(0.5) {
        DistanceMetric::Euclidean
    } else {
        DistanceMetric::NegativeCosine
    }
}

pub fn random_tau(r: &mut ChaCha8Rng, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => r.random_range(0.1..3.0),
        DistanceMetric::NegativeCosine => r.random_range(-1.0..1.0),
    }
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, dim: usize, c: usize, grid: bool) -> Vec<LabeledPoint> {
    (0..n)
        .map(|_| LabeledPoint::new(random_features(r, dim, grid), r.random_range(0..c)))
        .collect()
}

pub fn random_instance(r: &mut ChaCha8Rng, n: usize, c: usize, n_val: usize) -> Instance {
    let dim = r.random_range(1..=3);
    let grid = r.random_bool(0.3);
    let metric = random_metric(r);
    let tau = random_tau(r, metric);
    let train = Dataset::from_points(&random_points(r, n, dim, c, grid), dim, c).unwrap();
    let validation = random_points(r, n_val, dim, c, grid);
    Instance {
        train,
        validation,
        metric,
        tau,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Train/validation split of synthetic Gaussian data.
pub fn synthetic_split(n: usize, n_val: usize, d: usize, seed: u64) -> (Dataset, Dataset) {
    let all = tknn_core::dataset::generate_gaussian_synthetic(n + n_val, d, seed).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let val: Vec<usize> = (n..n + n_val).collect();
    (all.select(&train), all.select(&val))
}

//! Evaluation harness: AUROC, corrupted-point detection, runtime scaling and
//! an empirical consistency check for the threshold regressor.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::accountant::Accountant;
use crate::dataset::{generate_gaussian_synthetic, CorruptionKind, CorruptionRecord, Dataset, DistanceMetric};
use crate::dp::{dp_knn_shapley_all, dp_tknn_shapley_all, old_knn_sensitivity, DpParams, COUNT_SENSITIVITY};
use crate::error::{Error, Result};
use crate::knn::{knn_shapley_all, KnnConfig, KnnVariant};
use crate::rng;
use crate::tknn::{tknn_shapley_all, TknnConfig};
use crate::valuation::{MethodDescriptor, ValuationResult};

/// Probability that a random positive scores above a random negative, ties
/// counting one half (the Mann-Whitney statistic over `n+ * n-`).
pub fn auroc(scores: &[f64], positives: &[usize]) -> Result<f64> {
    let mut is_pos = vec![false; scores.len()];
    for &p in positives {
        let slot = is_pos
            .get_mut(p)
            .ok_or_else(|| Error::param("positives", format!("index {p} out of range")))?;
        *slot = true;
    }
    auroc_mask(scores, &is_pos)
}

/// [`auroc`] with positives given as a mask.
pub fn auroc_mask(scores: &[f64], is_pos: &[bool]) -> Result<f64> {
    if scores.len() != is_pos.len() {
        return Err(Error::Inconsistent("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores", "contain NaN"));
    }
    let n_pos = is_pos.iter().filter(|&&p| p).count() as u128;
    let n_neg = scores.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::param("positives", "need at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, in integers
    let (mut u2, mut neg_below) = (0u128, 0u128);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let pos = order[start..end].iter().filter(|&&i| is_pos[i]).count() as u128;
        let neg = (end - start) as u128 - pos;
        u2 += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        start = end;
    }
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Detection quality of `values`: corrupted points should receive low
/// values, so they are ranked by negated value.
pub fn detection_auroc(values: &[f64], record: &CorruptionRecord) -> Result<f64> {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    auroc(&negated, &record.indices)
}

/// A valuation method as run by the detection and benchmark pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Knn { k: usize, variant: KnnVariant },
    Tknn { tau: f64 },
    /// Private TKNN; the noise is calibrated so the release over the whole
    /// validation set is `(epsilon, delta)`-DP.
    DpTknn { tau: f64, epsilon: f64, delta: f64, q: f64 },
    /// Private older-variant KNN baseline, calibrated the same way.
    DpKnn { k: usize, epsilon: f64, delta: f64, q: f64, subsampled: bool },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Knn { variant: KnnVariant::Refined, .. } => "knn",
            Method::Knn { variant: KnnVariant::Old, .. } => "knn-old",
            Method::Tknn { .. } => "tknn",
            Method::DpTknn { .. } => "dp-tknn",
            Method::DpKnn { .. } => "dp-knn",
        }
    }

    /// Values every point of `ds` against `validation`. `seed` drives any noise.
    pub fn run(
        &self,
        ds: &Dataset,
        validation: &Dataset,
        metric: DistanceMetric,
        seed: u64,
        accountant: &Accountant,
    ) -> Result<ValuationResult> {
        let m = validation.len();
        match *self {
            Method::Knn { k, variant } => knn_shapley_all(ds, &KnnConfig::new(k, metric, variant), validation),
            Method::Tknn { tau } => tknn_shapley_all(ds, &TknnConfig::new(tau, metric), validation),
            Method::DpTknn { tau, epsilon, delta, q } => {
                let params = DpParams::accounted(epsilon, delta, COUNT_SENSITIVITY, q, m, seed, accountant)?;
                Ok(dp_tknn_shapley_all(ds, &TknnConfig::new(tau, metric), validation, &params)?.0)
            }
            Method::DpKnn { k, epsilon, delta, q, subsampled } => {
                let q = if subsampled { q } else { 1.0 };
                let params = DpParams::accounted(epsilon, delta, old_knn_sensitivity(k), q, m, seed, accountant)?;
                dp_knn_shapley_all(ds, &KnnConfig::new(k, metric, KnnVariant::Old), validation, &params, subsampled)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub method: MethodDescriptor,
    pub corruption: CorruptionKind,
    pub seed: u64,
    /// Seconds spent valuing; the only field that differs between reruns.
    pub wall_time: f64,
}

/// Values the corrupted dataset and scores how well low values find the
/// corrupted points.
pub fn run_detection(
    corrupted: &Dataset,
    record: &CorruptionRecord,
    method: &Method,
    validation: &Dataset,
    metric: DistanceMetric,
    seed: u64,
) -> Result<DetectionReport> {
    if let Some(&bad) = record.indices.iter().find(|&&i| i >= corrupted.len()) {
        return Err(Error::Inconsistent(format!(
            "corrupted index {bad} outside a dataset of {} points",
            corrupted.len()
        )));
    }
    let start = Instant::now();
    let result = method.run(corrupted, validation, metric, seed, &Accountant::default())?;
    let wall_time = start.elapsed().as_secs_f64();
    Ok(DetectionReport {
        auroc: detection_auroc(&result.scores, record)?,
        method: result.method,
        corruption: record.kind,
        seed,
        wall_time,
    })
}

/// One line of the runtime table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: String,
    pub median_seconds: f64,
    pub repeats: usize,
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median wall time of each method at each training size, on synthetic
/// Gaussian data with `n_val` validation points.
pub fn bench_runtime(
    ns: &[usize],
    d: usize,
    n_val: usize,
    methods: &[Method],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("ns", "must be ascending"));
    }
    if repeats < 3 {
        return Err(Error::param("repeats", "need at least 3 for a median"));
    }
    let validation = generate_gaussian_synthetic(n_val, d, rng::derive_seed(seed, &[1]))?;
    let accountant = Accountant::default();
    let trains = ns
        .iter()
        .map(|&n| generate_gaussian_synthetic(n, d, rng::derive_seed(seed, &[0, n as u64])))
        .collect::<Result<Vec<_>>>()?;
    // repeats run round-robin over every (N, method) cell so slow drift in
    // machine speed lands on all cells alike
    let mut seconds = vec![Vec::with_capacity(repeats); ns.len() * methods.len()];
    for r in 0..repeats {
        for (train, cells) in trains.iter().zip(seconds.chunks_mut(methods.len())) {
            for (method, cell) in methods.iter().zip(cells) {
                let start = Instant::now();
                let out = method.run(train, &validation, DistanceMetric::NegativeCosine, seed + r as u64, &accountant)?;
                cell.push(start.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
        }
    }
    let rows = seconds
        .into_iter()
        .enumerate()
        .map(|(cell, seconds)| BenchRow {
            n: ns[cell / methods.len()],
            method: methods[cell % methods.len()].name().to_string(),
            median_seconds: median(&seconds),
            repeats,
            seconds,
        })
        .collect();
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Threshold regressor on the line: mean label of the training points
/// within `tau` of the query, 0 when there are none.
#[derive(Debug, Clone)]
pub struct ThresholdRegressor {
    x: Vec<f64>,
    prefix: Vec<f64>,
}

impl ThresholdRegressor {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Inconsistent("x and y differ in length".into()));
        }
        let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(pairs.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &(_, yi) in &pairs {
            acc += yi;
            prefix.push(acc);
        }
        Ok(Self {
            x: pairs.into_iter().map(|p| p.0).collect(),
            prefix,
        })
    }

    pub fn predict(&self, x: f64, tau: f64) -> f64 {
        let lo = self.x.partition_point(|&v| v < x - tau);
        let hi = self.x.partition_point(|&v| v <= x + tau);
        if hi <= lo {
            return 0.0;
        }
        (self.prefix[hi] - self.prefix[lo]) / (hi - lo) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub tau: f64,
    pub mse: f64,
}

/// Test points per Monte-Carlo MSE estimate.
pub const CONSISTENCY_TEST_POINTS: usize = 2000;

/// Fits the threshold regressor to `y = x + N(0, 0.1^2)`, `x ~ U[0, 1]`,
/// for each `n` with threshold `tau(n)`, and reports its MSE against `m(x) = x`.
pub fn tknn_consistency_check(n_grid: &[usize], tau: impl Fn(usize) -> f64, seed: u64) -> Result<Vec<ConsistencyRow>> {
    if n_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("n_grid", "must be ascending"));
    }
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut r = rng::stream(seed, &[n as u64]);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|&xi| xi + noise.sample(&mut r)).collect();
        let model = ThresholdRegressor::fit(&x, &y)?;
        let t = tau(n);
        let mse = (0..CONSISTENCY_TEST_POINTS)
            .map(|_| {
                let xt: f64 = r.random();
                (model.predict(xt, t) - xt).powi(2)
            })
            .sum::<f64>()
            / CONSISTENCY_TEST_POINTS as f64;
        rows.push(ConsistencyRow { n, tau: t, mse });
    }
    Ok(rows)
}

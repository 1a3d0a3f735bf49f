use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    LabelFlip,
    FeatureNoise,
}

/// Ground truth for detection experiments: which rows were corrupted, and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub indices: Vec<usize>,
    pub kind: CorruptionKind,
}

impl CorruptionRecord {
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.indices {
            mask[i] = true;
        }
        mask
    }
}

/// Number of rows touched at `rate`: `round(rate * n)`, halves away from zero.
pub fn corruption_count(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

fn choose(ds: &Dataset, rate: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::param("rate", format!("{rate} is not in (0, 1)")));
    }
    let k = corruption_count(rate, ds.len());
    let mut picked = index::sample(rng, ds.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Flips the labels of `round(rate * N)` uniformly chosen rows; each new
/// label is drawn uniformly from the other `C - 1` classes.
pub fn flip_labels(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, CorruptionRecord)> {
    let mut rng = rng::stream(seed, &[rng::tag::CORRUPTION, 0]);
    let picked = choose(ds, rate, &mut rng)?;
    let c = ds.num_classes();
    let mut out = ds.clone();
    let labels = out.labels_mut();
    for &i in &picked {
        let old = labels[i];
        let r = rng.random_range(0..c - 1);
        labels[i] = if r >= old { r + 1 } else { r };
    }
    Ok((
        out,
        CorruptionRecord {
            indices: picked,
            kind: CorruptionKind::LabelFlip,
        },
    ))
}

/// Adds zero-mean Gaussian noise to `round(rate * N)` rows. The noise scale of
/// dimension `j` is the mean absolute value of column `j` over the clean data.
pub fn add_feature_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, CorruptionRecord)> {
    let mut rng = rng::stream(seed, &[rng::tag::CORRUPTION, 1]);
    let picked = choose(ds, rate, &mut rng)?;
    let d = ds.dim();
    let mut scale = vec![0.0; d];
    for row in ds.raw_features().chunks_exact(d) {
        for (s, v) in scale.iter_mut().zip(row) {
            *s += v.abs();
        }
    }
    scale.iter_mut().for_each(|s| *s /= ds.len() as f64);

    let noise: Vec<Normal<f64>> = scale
        .iter()
        .map(|&s| Normal::new(0.0, s).expect("mean absolute value is finite and non-negative"))
        .collect();
    let mut out = ds.clone();
    let feats = out.raw_features_mut();
    for &i in &picked {
        for (j, dist) in noise.iter().enumerate() {
            feats[i * d + j] += dist.sample(&mut rng);
        }
    }
    out.refresh_norms();
    Ok((
        out,
        CorruptionRecord {
            indices: picked,
            kind: CorruptionKind::FeatureNoise,
        },
    ))
}

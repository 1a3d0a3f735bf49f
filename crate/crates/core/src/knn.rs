//! Exact KNN-Shapley by the sorted recursion, O(N log N) per validation point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DistanceMetric, LabeledPoint};
use crate::error::{Error, Result};
use crate::valuation::{Algorithm, MethodDescriptor, UtilityKind, ValuationResult, WeightKind};

/// Which KNN utility the recursion values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnVariant {
    /// Soft-label likelihood: correct neighbors divided by `min(K, |S|)`.
    Refined,
    /// Correct neighbors divided by `K`; the only variant with a tight
    /// global sensitivity, `1 / (K (K + 1))`.
    Old,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: DistanceMetric,
    pub variant: KnnVariant,
}

impl KnnConfig {
    pub fn new(k: usize, metric: DistanceMetric, variant: KnnVariant) -> Self {
        Self { k, metric, variant }
    }

    pub fn utility(&self) -> UtilityKind {
        match self.variant {
            KnnVariant::Refined => UtilityKind::KnnSoft { k: self.k },
            KnnVariant::Old => UtilityKind::KnnOld { k: self.k },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn descriptor(&self, num_classes: usize) -> MethodDescriptor {
        MethodDescriptor {
            utility: self.utility(),
            weight: WeightKind::Shapley,
            algorithm: Algorithm::Recursion,
            metric: self.metric,
            num_classes,
            privacy: None,
        }
    }
}

fn harmonic(m: usize) -> f64 {
    (1..=m).map(|j| 1.0 / j as f64).sum()
}

/// Harmonic partial sums the recursion needs for a fixed `(N, K)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Harmonics {
    n: usize,
    k: usize,
    /// H_{min(K, N)}
    h_min: f64,
    /// H_{N-1}
    h_n1: f64,
}

impl Harmonics {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            h_min: harmonic(k.min(n)),
            h_n1: harmonic(n.saturating_sub(1)),
        }
    }
}

/// Shapley values of points already sorted by ascending distance.
/// `matches[i]` says whether the `i`-th nearest point carries the validation
/// label. Scores are written in the same sorted order.
pub(crate) fn recursion_sorted(
    matches: &[bool],
    variant: KnnVariant,
    num_classes: usize,
    h: &Harmonics,
    out: &mut [f64],
) {
    let n = matches.len();
    debug_assert_eq!(n, h.n);
    if n == 0 {
        return;
    }
    let k = h.k;
    let m = |i: usize| f64::from(u8::from(matches[i]));
    let nf = n as f64;
    let kf = k as f64;
    match variant {
        KnnVariant::Refined => {
            let last = m(n - 1);
            let mut phi = (last - 1.0 / num_classes as f64) / nf;
            if n >= 2 {
                let before: f64 = matches[..n - 1].iter().filter(|&&b| b).count() as f64;
                phi += (last - before / (nf - 1.0)) * (h.h_min - 1.0) / nf;
            }
            out[n - 1] = phi;
            for pos in (0..n - 1).rev() {
                let i = pos + 1; // 1-based rank
                let coef = if n >= k {
                    h.h_min + ((i.min(k) as f64) * (nf - 1.0) / i as f64 - kf) / kf
                } else {
                    // fewer points than K: every coalition is fully counted
                    h.h_n1
                };
                phi += (m(pos) - m(pos + 1)) / (nf - 1.0) * coef;
                out[pos] = phi;
            }
        }
        KnnVariant::Old => {
            let mut phi = m(n - 1) / k.max(n) as f64;
            out[n - 1] = phi;
            for pos in (0..n - 1).rev() {
                let i = pos + 1;
                phi += (m(pos) - m(pos + 1)) / kf * (i.min(k) as f64) / i as f64;
                out[pos] = phi;
            }
        }
    }
}

/// Row indices of `ds` sorted by `(distance, index)`.
pub(crate) fn sorted_order(distances: &[f64]) -> Vec<u32> {
    let mut keyed: Vec<(f64, u32)> = distances.iter().enumerate().map(|(i, &d)| (d, i as u32)).collect();
    keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Per-validation-point work buffers.
struct Scratch {
    dist: Vec<f64>,
    matches: Vec<bool>,
    sorted_scores: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            dist: vec![0.0; n],
            matches: vec![false; n],
            sorted_scores: vec![0.0; n],
        }
    }
}

fn accumulate_one(
    ds: &Dataset,
    cfg: &KnnConfig,
    zval: &LabeledPoint,
    h: &Harmonics,
    scratch: &mut Scratch,
    acc: &mut [f64],
) -> Result<()> {
    ds.check_point(zval)?;
    cfg.metric.distances_into(ds, &zval.features, &mut scratch.dist)?;
    let order = sorted_order(&scratch.dist);
    for (slot, &i) in scratch.matches.iter_mut().zip(&order) {
        *slot = ds.label(i as usize) == zval.label;
    }
    recursion_sorted(&scratch.matches, cfg.variant, ds.num_classes(), h, &mut scratch.sorted_scores);
    for (&i, &s) in order.iter().zip(&scratch.sorted_scores) {
        acc[i as usize] += s;
    }
    Ok(())
}

/// KNN-Shapley of every training point for one validation point.
pub fn knn_shapley_single(ds: &Dataset, cfg: &KnnConfig, zval: &LabeledPoint) -> Result<ValuationResult> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let h = Harmonics::new(ds.len(), cfg.k);
    let mut scores = vec![0.0; ds.len()];
    accumulate_one(ds, cfg, zval, &h, &mut Scratch::new(ds.len()), &mut scores)?;
    Ok(ValuationResult {
        method: cfg.descriptor(ds.num_classes()),
        validation_size: 1,
        scores,
    })
}

/// Validation points per parallel work unit. Fixed so sums are identical
/// regardless of thread count.
pub(crate) const VALIDATION_CHUNK: usize = 8;

/// Sum of [`knn_shapley_single`] over the validation set.
pub fn knn_shapley_all(ds: &Dataset, cfg: &KnnConfig, validation: &Dataset) -> Result<ValuationResult> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if validation.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: validation.dim(),
        });
    }
    let n = ds.len();
    let h = Harmonics::new(n, cfg.k);
    let chunks: Vec<usize> = (0..validation.len()).step_by(VALIDATION_CHUNK).collect();
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; n];
            let mut scratch = Scratch::new(n);
            for v in start..(start + VALIDATION_CHUNK).min(validation.len()) {
                let z = validation.point(v).to_owned();
                accumulate_one(ds, cfg, &z, &h, &mut scratch, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; n];
    for part in partials {
        for (s, p) in scores.iter_mut().zip(part) {
            *s += p;
        }
    }
    Ok(ValuationResult {
        method: cfg.descriptor(ds.num_classes()),
        validation_size: validation.len(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on_line(labels: &[usize], num_classes: usize) -> Dataset {
        let feats = (0..labels.len()).map(|i| (i + 1) as f64).collect();
        Dataset::from_parts(feats, labels.to_vec(), 1, num_classes).unwrap()
    }

    fn cfg(k: usize, variant: KnnVariant) -> KnnConfig {
        KnnConfig::new(k, DistanceMetric::Euclidean, variant)
    }

    #[test]
    fn refined_single_point() {
        for (label, expect) in [(1, 0.5), (0, -0.5)] {
            let ds = on_line(&[label], 2);
            let r = knn_shapley_single(&ds, &cfg(3, KnnVariant::Refined), &LabeledPoint::new(vec![0.0], 1)).unwrap();
            assert_eq!(r.scores, vec![expect]);
        }
    }

    #[test]
    fn refined_three_points_k1() {
        // sorted labels (match, mismatch, match), C = 2
        let ds = on_line(&[1, 0, 1], 2);
        let r = knn_shapley_single(&ds, &cfg(1, KnnVariant::Refined), &LabeledPoint::new(vec![0.0], 1)).unwrap();
        let expect = [2.0 / 3.0, -1.0 / 3.0, 1.0 / 6.0];
        for (a, b) in r.scores.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", r.scores);
        }
        assert!((r.scores.iter().sum::<f64>() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn old_with_fewer_points_than_k() {
        let ds = on_line(&[1, 0, 1, 1], 2);
        let r = knn_shapley_single(&ds, &cfg(5, KnnVariant::Old), &LabeledPoint::new(vec![0.0], 1)).unwrap();
        assert_eq!(r.scores, vec![0.2, 0.0, 0.2, 0.2]);
    }

    #[test]
    fn scores_keyed_by_owner_not_position() {
        let ds = Dataset::from_parts(vec![3.0, 1.0, 2.0], vec![0, 1, 1], 1, 2).unwrap();
        let z = LabeledPoint::new(vec![0.0], 1);
        let r = knn_shapley_single(&ds, &cfg(2, KnnVariant::Refined), &z).unwrap();
        let sorted = on_line(&[1, 1, 0], 2);
        let s = knn_shapley_single(&sorted, &cfg(2, KnnVariant::Refined), &z).unwrap();
        assert_eq!(r.scores, vec![s.scores[2], s.scores[0], s.scores[1]]);
    }

    #[test]
    fn all_equals_single_for_one_validation_point() {
        let ds = on_line(&[1, 0, 0, 1, 1], 2);
        let val = Dataset::from_parts(vec![2.5], vec![0], 1, 2).unwrap();
        let c = cfg(2, KnnVariant::Refined);
        let all = knn_shapley_all(&ds, &c, &val).unwrap();
        let one = knn_shapley_single(&ds, &c, &val.point(0).to_owned()).unwrap();
        assert_eq!(all.scores, one.scores);
    }

    #[test]
    fn errors() {
        let ds = Dataset::empty(1, 2).unwrap();
        let z = LabeledPoint::new(vec![0.0], 1);
        assert!(matches!(knn_shapley_single(&ds, &cfg(1, KnnVariant::Old), &z), Err(Error::EmptyDataset)));
        let ds = on_line(&[1], 2);
        let empty = Dataset::empty(1, 2).unwrap();
        assert!(matches!(knn_shapley_all(&ds, &cfg(1, KnnVariant::Old), &empty), Err(Error::EmptyValidation)));
        assert!(knn_shapley_single(&ds, &cfg(0, KnnVariant::Old), &z).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DistanceMetric, LabeledPoint};
use crate::error::{Error, Result};

/// Per-validation-point utility of a training subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityKind {
    /// Fraction of the `min(K, |S|)` nearest points carrying the validation
    /// label; `1/C` on the empty set.
    KnnSoft { k: usize },
    /// Number of correct labels among the `K` nearest, divided by `K`; `0` on
    /// the empty set.
    KnnOld { k: usize },
    /// Fraction of points within distance `tau` carrying the validation
    /// label; `1/C` when no point is within `tau`.
    Tknn { tau: f64 },
}

impl UtilityKind {
    pub fn validate(&self, metric: DistanceMetric) -> Result<()> {
        match *self {
            UtilityKind::KnnSoft { k } | UtilityKind::KnnOld { k } if k == 0 => {
                Err(Error::param("k", "must be at least 1"))
            }
            UtilityKind::Tknn { tau } => metric.check_threshold(tau),
            _ => Ok(()),
        }
    }
}

/// A utility game for one validation point, prepared for repeated subset
/// evaluation: points are pre-sorted by `(distance, index)`.
#[derive(Debug, Clone)]
pub(crate) struct PreparedUtility {
    kind: UtilityKind,
    num_classes: usize,
    /// Training indices in ascending distance; ties by index.
    order: Vec<usize>,
    matches: Vec<bool>,
    within: Vec<bool>,
}

impl PreparedUtility {
    pub(crate) fn new(
        kind: UtilityKind,
        ds: &Dataset,
        zval: &LabeledPoint,
        metric: DistanceMetric,
    ) -> Result<Self> {
        kind.validate(metric)?;
        ds.check_point(zval)?;
        let dist = metric.distances_to(ds, &zval.features)?;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let matches = ds.labels().iter().map(|&l| l == zval.label).collect();
        let within = match kind {
            UtilityKind::Tknn { tau } => dist.iter().map(|&d| d <= tau).collect(),
            _ => vec![false; ds.len()],
        };
        Ok(Self {
            kind,
            num_classes: ds.num_classes(),
            order,
            matches,
            within,
        })
    }

    /// Utility of the subset whose members satisfy `contains`.
    pub(crate) fn value(&self, contains: impl Fn(usize) -> bool) -> f64 {
        let random_guess = 1.0 / self.num_classes as f64;
        match self.kind {
            UtilityKind::KnnSoft { k } | UtilityKind::KnnOld { k } => {
                let mut taken = 0usize;
                let mut correct = 0usize;
                for &i in &self.order {
                    if taken == k {
                        break;
                    }
                    if contains(i) {
                        taken += 1;
                        correct += usize::from(self.matches[i]);
                    }
                }
                match self.kind {
                    UtilityKind::KnnSoft { .. } if taken == 0 => random_guess,
                    UtilityKind::KnnSoft { .. } => correct as f64 / taken as f64,
                    _ => correct as f64 / k as f64,
                }
            }
            UtilityKind::Tknn { .. } => {
                let (mut nb, mut correct) = (0usize, 0usize);
                for i in 0..self.matches.len() {
                    if self.within[i] && contains(i) {
                        nb += 1;
                        correct += usize::from(self.matches[i]);
                    }
                }
                if nb == 0 {
                    random_guess
                } else {
                    correct as f64 / nb as f64
                }
            }
        }
    }
}

/// Utility of the training subset `subset` (row indices of `ds`) for one
/// validation point.
pub fn utility(
    kind: UtilityKind,
    ds: &Dataset,
    subset: &[usize],
    zval: &LabeledPoint,
    metric: DistanceMetric,
) -> Result<f64> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Inconsistent(format!("subset index {bad} out of range")));
    }
    let prepared = PreparedUtility::new(kind, ds, zval, metric)?;
    let mut member = vec![false; ds.len()];
    for &i in subset {
        member[i] = true;
    }
    Ok(prepared.value(|i| member[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[(f64, usize)]) -> Dataset {
        let feats = xs.iter().map(|p| p.0).collect();
        let labels = xs.iter().map(|p| p.1).collect();
        Dataset::from_parts(feats, labels, 1, 2).unwrap()
    }

    #[test]
    fn tknn_without_neighbors_is_random_guess() {
        let ds = line(&[(5.0, 1)]);
        let z = LabeledPoint::new(vec![0.0], 1);
        let v = utility(UtilityKind::Tknn { tau: 1.0 }, &ds, &[0], &z, DistanceMetric::Euclidean).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn knn_soft_vs_old_on_singleton() {
        let ds = line(&[(0.1, 1)]);
        let z = LabeledPoint::new(vec![0.0], 1);
        let m = DistanceMetric::Euclidean;
        assert_eq!(utility(UtilityKind::KnnSoft { k: 3 }, &ds, &[0], &z, m).unwrap(), 1.0);
        assert_eq!(utility(UtilityKind::KnnOld { k: 3 }, &ds, &[0], &z, m).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn empty_subset_conventions() {
        let ds = line(&[(0.1, 1)]);
        let z = LabeledPoint::new(vec![0.0], 0);
        let m = DistanceMetric::Euclidean;
        assert_eq!(utility(UtilityKind::KnnSoft { k: 2 }, &ds, &[], &z, m).unwrap(), 0.5);
        assert_eq!(utility(UtilityKind::KnnOld { k: 2 }, &ds, &[], &z, m).unwrap(), 0.0);
        assert_eq!(utility(UtilityKind::Tknn { tau: 1.0 }, &ds, &[], &z, m).unwrap(), 0.5);
    }

    #[test]
    fn knn_uses_nearest_k_with_index_tie_break() {
        // two points at equal distance, K = 1: the lower index wins
        let ds = line(&[(1.0, 0), (-1.0, 1)]);
        let z = LabeledPoint::new(vec![0.0], 1);
        let v = utility(UtilityKind::KnnSoft { k: 1 }, &ds, &[0, 1], &z, DistanceMetric::Euclidean).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tau_outside_metric_range_rejected() {
        let ds = line(&[(1.0, 0)]);
        let z = LabeledPoint::new(vec![1.0], 1);
        assert!(utility(UtilityKind::Tknn { tau: -1.5 }, &ds, &[0], &z, DistanceMetric::NegativeCosine).is_err());
    }
}

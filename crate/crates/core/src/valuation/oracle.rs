//! Exhaustive-enumeration ground truth for small instances.

use super::utility::PreparedUtility;
use super::{Algorithm, MethodDescriptor, SemivalueWeight, UtilityKind, ValuationResult};
use crate::dataset::{Dataset, DistanceMetric, LabeledPoint};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_LIMIT: usize = 20;

/// Semivalues of an `n`-player game given as `v(mask)`, where bit `i` of
/// `mask` marks player `i`. Evaluates `v` once per coalition.
pub fn enumerate_semivalues(
    n: usize,
    weight: &SemivalueWeight,
    limit: usize,
    v: impl Fn(u64) -> f64,
) -> Result<Vec<f64>> {
    if n > limit.min(30) {
        return Err(Error::EnumerationLimit { n, limit });
    }
    weight.check_normalized(n)?;
    let table: Vec<f64> = (0..1u64 << n).map(&v).collect();
    let w: Vec<f64> = (1..=n).map(|k| weight.weight(n, k)).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for mask in 0..1u64 << n {
            if mask & bit == 0 {
                let size = mask.count_ones() as usize;
                acc += w[size] * (table[(mask | bit) as usize] - table[mask as usize]);
            }
        }
        *p = acc / n as f64;
    }
    Ok(phi)
}

/// Enumeration oracle over the summed utility of a whole validation set.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub limit: usize,
}

impl Default for Oracle {
    fn default() -> Self {
        Self {
            limit: DEFAULT_ENUMERATION_LIMIT,
        }
    }
}

impl Oracle {
    pub fn semivalues(
        &self,
        ds: &Dataset,
        kind: UtilityKind,
        weight: &SemivalueWeight,
        validation: &[LabeledPoint],
        metric: DistanceMetric,
    ) -> Result<ValuationResult> {
        if ds.len() > self.limit {
            return Err(Error::EnumerationLimit {
                n: ds.len(),
                limit: self.limit,
            });
        }
        let games = validation
            .iter()
            .map(|z| PreparedUtility::new(kind, ds, z, metric))
            .collect::<Result<Vec<_>>>()?;
        let scores = enumerate_semivalues(ds.len(), weight, self.limit, |mask| {
            games
                .iter()
                .map(|g| g.value(|i| mask >> i & 1 == 1))
                .sum()
        })?;
        Ok(ValuationResult {
            method: MethodDescriptor {
                utility: kind,
                weight: weight.kind(),
                algorithm: Algorithm::Enumeration,
                metric,
                num_classes: ds.num_classes(),
                privacy: None,
            },
            validation_size: validation.len(),
            scores,
        })
    }

    /// Total utility `v(S)` of the subset marked by `mask`, summed over `validation`.
    pub fn utility_of_mask(
        &self,
        ds: &Dataset,
        kind: UtilityKind,
        validation: &[LabeledPoint],
        metric: DistanceMetric,
        mask: u64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for z in validation {
            total += PreparedUtility::new(kind, ds, z, metric)?.value(|i| mask >> i & 1 == 1);
        }
        Ok(total)
    }
}

/// Exact Shapley values by enumerating every coalition.
pub fn shapley_oracle(
    ds: &Dataset,
    kind: UtilityKind,
    zval: &LabeledPoint,
    metric: DistanceMetric,
) -> Result<ValuationResult> {
    Oracle::default().semivalues(ds, kind, &SemivalueWeight::Shapley, std::slice::from_ref(zval), metric)
}

/// Exact semivalues for an arbitrary normalized weight.
pub fn semivalue_oracle(
    ds: &Dataset,
    kind: UtilityKind,
    weight: &SemivalueWeight,
    zval: &LabeledPoint,
    metric: DistanceMetric,
) -> Result<ValuationResult> {
    Oracle::default().semivalues(ds, kind, weight, std::slice::from_ref(zval), metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tknn_pair() -> (Dataset, LabeledPoint) {
        // both points within tau of the query; labels (match, mismatch)
        let ds = Dataset::from_parts(vec![0.1, 0.2], vec![1, 0], 1, 2).unwrap();
        (ds, LabeledPoint::new(vec![0.0], 1))
    }

    #[test]
    fn single_point_tknn() {
        let ds = Dataset::from_parts(vec![0.1], vec![1], 1, 2).unwrap();
        let z = LabeledPoint::new(vec![0.0], 1);
        let r = shapley_oracle(&ds, UtilityKind::Tknn { tau: 1.0 }, &z, DistanceMetric::Euclidean).unwrap();
        assert_eq!(r.scores, vec![0.5]);
    }

    #[test]
    fn two_point_tknn_by_hand() {
        // v(0)=.5, v(a)=1, v(b)=0, v(ab)=.5
        // phi_a = .5*(1-.5) + .5*(.5-0) = .5 ; phi_b = -.5
        let (ds, z) = tknn_pair();
        let r = shapley_oracle(&ds, UtilityKind::Tknn { tau: 1.0 }, &z, DistanceMetric::Euclidean).unwrap();
        assert_eq!(r.scores, vec![0.5, -0.5]);
    }

    #[test]
    fn banzhaf_two_points_is_subset_average() {
        let (ds, z) = tknn_pair();
        let kind = UtilityKind::Tknn { tau: 1.0 };
        let m = DistanceMetric::Euclidean;
        let r = semivalue_oracle(&ds, kind, &SemivalueWeight::Banzhaf, &z, m).unwrap();
        let v = |s: &[usize]| super::super::utility(kind, &ds, s, &z, m).unwrap();
        let expected = 0.5 * ((v(&[0]) - v(&[])) + (v(&[0, 1]) - v(&[1])));
        assert!((r.scores[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shapley_weight_reproduces_shapley_oracle() {
        let ds = Dataset::from_parts(vec![0.1, -0.3, 0.7, 0.2, 1.4], vec![1, 0, 1, 1, 0], 1, 2).unwrap();
        let z = LabeledPoint::new(vec![0.0], 1);
        let kind = UtilityKind::KnnSoft { k: 2 };
        let m = DistanceMetric::Euclidean;
        let a = shapley_oracle(&ds, kind, &z, m).unwrap();
        let b = semivalue_oracle(&ds, kind, &SemivalueWeight::Shapley, &z, m).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard() {
        let ds = Dataset::from_parts(vec![0.0; 21], vec![0; 21], 1, 2).unwrap();
        let z = LabeledPoint::new(vec![0.0], 1);
        let err = shapley_oracle(&ds, UtilityKind::KnnSoft { k: 1 }, &z, DistanceMetric::Euclidean).unwrap_err();
        assert!(matches!(err, Error::EnumerationLimit { n: 21, .. }));
    }

    #[test]
    fn enumeration_of_additive_game() {
        // v(S) = sum of player weights: every semivalue returns the weights
        let wts = [1.0, -2.0, 0.5];
        let v = |mask: u64| (0..3).filter(|i| mask >> i & 1 == 1).map(|i| wts[i]).sum::<f64>();
        for w in [SemivalueWeight::Shapley, SemivalueWeight::Banzhaf] {
            let phi = enumerate_semivalues(3, &w, 20, v).unwrap();
            for (p, e) in phi.iter().zip(wts) {
                assert!((p - e).abs() < 1e-12);
            }
        }
    }
}

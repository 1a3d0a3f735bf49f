use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Distance used to rank or threshold training points against a query.
///
/// `NegativeCosine` is minus the cosine similarity: smaller means closer and
/// the value always lies in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    #[default]
    NegativeCosine,
}

impl DistanceMetric {
    /// Closed range of values the metric can produce.
    pub fn range(self) -> (f64, f64) {
        match self {
            DistanceMetric::Euclidean => (0.0, f64::INFINITY),
            DistanceMetric::NegativeCosine => (-1.0, 1.0),
        }
    }

    pub fn check_threshold(self, tau: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if !tau.is_finite() || tau < lo || tau > hi {
            return Err(Error::param(
                "tau",
                format!("{tau} is outside the metric range [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }

    /// Distances from `query` to every row of `ds`, in row order.
    pub fn distances_to(self, ds: &Dataset, query: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; ds.len()];
        self.distances_into(ds, query, &mut out)?;
        Ok(out)
    }

    pub fn distances_into(self, ds: &Dataset, query: &[f64], out: &mut [f64]) -> Result<()> {
        self.distances_rows_into(ds, 0, query, out)
    }

    /// Distances from `query` to rows `start..start + out.len()` of `ds`.
    pub(crate) fn distances_rows_into(self, ds: &Dataset, start: usize, query: &[f64], out: &mut [f64]) -> Result<()> {
        if query.len() != ds.dim() {
            return Err(Error::DimensionMismatch {
                expected: ds.dim(),
                got: query.len(),
            });
        }
        let dim = ds.dim();
        let rows = ds.raw_features()[start * dim..(start + out.len()) * dim].chunks_exact(dim);
        match self {
            DistanceMetric::Euclidean => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = squared_diff(row, query).sqrt();
                }
            }
            DistanceMetric::NegativeCosine => {
                let qn = norm(query);
                if qn == 0.0 {
                    return Err(Error::ZeroVector);
                }
                for (i, (o, row)) in out.iter_mut().zip(rows).enumerate() {
                    let rn = ds.norm(start + i);
                    if rn == 0.0 {
                        return Err(Error::ZeroVector);
                    }
                    *o = -(dot(row, query) / (rn * qn)).clamp(-1.0, 1.0);
                }
            }
        }
        Ok(())
    }
}

/// Distance between two vectors under `metric`.
pub fn distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match metric {
        DistanceMetric::Euclidean => Ok(squared_diff(a, b).sqrt()),
        DistanceMetric::NegativeCosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(-(dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn squared_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn euclidean_identity_is_zero() {
        let a = [0.3, -1.2, 4.0];
        assert_eq!(distance(DistanceMetric::Euclidean, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn cosine_of_parallel_vectors_is_minus_one() {
        let a = [0.6, 0.8];
        assert_eq!(distance(DistanceMetric::NegativeCosine, &a, &a).unwrap(), -1.0);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        let d = distance(DistanceMetric::NegativeCosine, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            distance(DistanceMetric::Euclidean, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            distance(DistanceMetric::NegativeCosine, &[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn batch_matches_pairwise() {
        let ds = Dataset::from_parts(vec![1.0, 2.0, -3.0, 0.5, 0.1, 0.1], vec![0, 1, 0], 2, 2).unwrap();
        let q = [0.7, -0.2];
        for metric in [DistanceMetric::Euclidean, DistanceMetric::NegativeCosine] {
            let batch = metric.distances_to(&ds, &q).unwrap();
            for (i, d) in batch.iter().enumerate() {
                assert_eq!(*d, distance(metric, ds.features(i), &q).unwrap());
            }
        }
    }

    fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn symmetric(a in nonzero_vec(4), b in nonzero_vec(4)) {
            for m in [DistanceMetric::Euclidean, DistanceMetric::NegativeCosine] {
                prop_assert_eq!(distance(m, &a, &b).unwrap(), distance(m, &b, &a).unwrap());
            }
        }

        #[test]
        fn triangle_inequality(a in nonzero_vec(3), b in nonzero_vec(3), c in nonzero_vec(3)) {
            let d = |x: &[f64], y: &[f64]| distance(DistanceMetric::Euclidean, x, y).unwrap();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }
    }

    #[test]
    fn cosine_bounded_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = distance(DistanceMetric::NegativeCosine, &a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&d));
        }
    }
}

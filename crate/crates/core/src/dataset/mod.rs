//! Labeled feature data, distances, ingestion, synthetic generation and
//! corruption operators.

mod corrupt;
mod ingest;
mod metric;
mod synthetic;

pub use corrupt::{add_feature_noise, corruption_count, flip_labels, CorruptionKind, CorruptionRecord};
pub use ingest::{load_csv, read_csv, CsvOptions, LabelColumn};
pub use metric::{distance, DistanceMetric};
pub use synthetic::generate_gaussian_synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single feature vector with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Borrowed view of one row of a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct PointRef<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

impl PointRef<'_> {
    pub fn to_owned(&self) -> LabeledPoint {
        LabeledPoint::new(self.features.to_vec(), self.label)
    }
}

/// An ordered, immutable collection of labeled points.
///
/// Row `i` is owner `i`. Features are stored row-major in one buffer and the
/// Euclidean norm of every row is cached for cosine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    norms: Vec<f64>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn from_parts(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension", "must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::param("num_classes", "must be at least 2"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let norms = features
            .chunks_exact(dim)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            features,
            labels,
            norms,
            dim,
            num_classes,
        })
    }

    pub fn from_points(points: &[LabeledPoint], dim: usize, num_classes: usize) -> Result<Self> {
        let mut features = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.features.len(),
                });
            }
            features.extend_from_slice(&p.features);
        }
        let labels = points.iter().map(|p| p.label).collect();
        Self::from_parts(features, labels, dim, num_classes)
    }

    pub fn empty(dim: usize, num_classes: usize) -> Result<Self> {
        Self::from_parts(Vec::new(), Vec::new(), dim, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn point(&self, i: usize) -> PointRef<'_> {
        PointRef {
            features: self.features(i),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = PointRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn to_points(&self) -> Vec<LabeledPoint> {
        self.iter().map(|p| p.to_owned()).collect()
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut norms = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
            norms.push(self.norms[i]);
        }
        Self {
            features,
            labels,
            norms,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// A copy with row `i` removed.
    pub fn without(&self, i: usize) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| j != i).collect();
        self.select(&keep)
    }

    /// A copy with `point` appended as the last row.
    pub fn with_point(&self, point: &LabeledPoint) -> Result<Self> {
        self.check_point(point)?;
        let mut out = self.clone();
        out.features.extend_from_slice(&point.features);
        out.labels.push(point.label);
        out.norms
            .push(point.features.iter().map(|v| v * v).sum::<f64>().sqrt());
        Ok(out)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let num_classes = self.num_classes.max(other.num_classes);
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut norms = self.norms.clone();
        norms.extend_from_slice(&other.norms);
        Ok(Self {
            features,
            labels,
            norms,
            dim: self.dim,
            num_classes,
        })
    }

    /// Same rows, relabelled to a different declared class count.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::param("num_classes", "must be at least 2"));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn check_point(&self, point: &LabeledPoint) -> Result<()> {
        if point.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.features.len(),
            });
        }
        if point.label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label: point.label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub(crate) fn raw_features(&self) -> &[f64] {
        &self.features
    }

    pub(crate) fn raw_features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub(crate) fn refresh_norms(&mut self) {
        self.norms = self
            .features
            .chunks_exact(self.dim)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_parts(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 1, 0], 2, 2).unwrap()
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = Dataset::from_parts(vec![0.0, 1.0], vec![2], 2, 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn rejects_ragged_buffer() {
        assert!(Dataset::from_parts(vec![0.0, 1.0, 2.0], vec![0, 1], 2, 2).is_err());
    }

    #[test]
    fn without_and_with_point() {
        let ds = toy();
        let smaller = ds.without(1);
        assert_eq!(smaller.len(), 2);
        assert_eq!(smaller.features(1), &[4.0, 5.0]);
        let bigger = smaller.with_point(&ds.point(1).to_owned()).unwrap();
        assert_eq!(bigger.label(2), 1);
        assert_eq!(bigger.norm(2), ds.norm(1));
    }

    #[test]
    fn select_preserves_order() {
        let ds = toy();
        let s = ds.select(&[2, 0]);
        assert_eq!(s.labels(), &[0, 0]);
        assert_eq!(s.features(0), &[4.0, 5.0]);
    }
}

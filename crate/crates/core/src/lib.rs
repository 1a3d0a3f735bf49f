//! Exact and differentially private Shapley data valuation for nearest
//! neighbor classifiers.
//!
//! * [`knn`]: the O(N log N) recursive KNN-Shapley (refined and older forms).
//! * [`tknn`]: closed-form threshold-KNN Shapley from three counting queries.
//! * [`valuation`]: utilities, semivalue weights and the enumeration oracle.
//! * [`dp`] and [`accountant`]: private release of TKNN scores and the
//!   privacy-loss-distribution accountant used to compose it.
//! * [`mia`] and [`eval`]: membership inference and detection experiments.

pub mod accountant;
pub mod dataset;
pub mod dp;
pub mod error;
pub mod eval;
pub mod knn;
pub mod mia;
pub mod rng;
pub mod tknn;
pub mod valuation;

pub use dataset::{Dataset, DistanceMetric, LabeledPoint};
pub use error::{Error, Result};
pub use knn::{KnnConfig, KnnVariant};
pub use tknn::{NeighborCounts, TknnConfig};
pub use valuation::{MethodDescriptor, UtilityKind, ValuationResult};

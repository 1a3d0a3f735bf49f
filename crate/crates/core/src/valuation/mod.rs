//! Utilities, semivalue weights, scores, and the brute-force oracle.

mod oracle;
mod result;
mod utility;
mod weight;

pub use oracle::{enumerate_semivalues, semivalue_oracle, shapley_oracle, Oracle, DEFAULT_ENUMERATION_LIMIT};
pub use result::{aggregate_over_validation, Algorithm, MethodDescriptor, PrivacyBudget, ValuationResult};
pub use utility::{utility, UtilityKind};
pub use weight::{SemivalueWeight, WeightKind};



use serde::{Deserialize, Serialize};

use super::{UtilityKind, WeightKind};
use crate::dataset::DistanceMetric;
use crate::error::{Error, Result};

/// How the scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Enumeration,
    Recursion,
    ClosedForm,
    DirectSum,
}

/// Parameters of a private release, echoed into results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub mechanism: String,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    pub sensitivity: f64,
    pub q: f64,
    pub seed: u64,
    pub noise_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub utility: UtilityKind,
    pub weight: WeightKind,
    pub algorithm: Algorithm,
    pub metric: DistanceMetric,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyBudget>,
}

/// One score per training row, plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationResult {
    pub method: MethodDescriptor,
    pub validation_size: usize,
    pub scores: Vec<f64>,
}

impl ValuationResult {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Sums per-validation-point results (Shapley values are linear in the
/// utility). The validation sizes add up.
pub fn aggregate_over_validation(results: &[ValuationResult]) -> Result<ValuationResult> {
    let (first, rest) = results.split_first().ok_or(Error::EmptyValidation)?;
    let mut out = first.clone();
    for r in rest {
        if r.scores.len() != out.scores.len() {
            return Err(Error::Inconsistent(format!(
                "score vectors of length {} and {}",
                out.scores.len(),
                r.scores.len()
            )));
        }
        if r.method != out.method {
            return Err(Error::Inconsistent("results come from different methods".into()));
        }
        for (a, b) in out.scores.iter_mut().zip(&r.scores) {
            *a += b;
        }
        out.validation_size += r.validation_size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(scores: Vec<f64>) -> ValuationResult {
        ValuationResult {
            method: MethodDescriptor {
                utility: UtilityKind::Tknn { tau: -0.5 },
                weight: WeightKind::Shapley,
                algorithm: Algorithm::ClosedForm,
                metric: DistanceMetric::NegativeCosine,
                num_classes: 2,
                privacy: None,
            },
            validation_size: 1,
            scores,
        }
    }

    #[test]
    fn single_input_is_identity() {
        let r = result(vec![0.25, -1.0]);
        assert_eq!(aggregate_over_validation(std::slice::from_ref(&r)).unwrap(), r);
    }

    #[test]
    fn opposite_scores_cancel() {
        let agg = aggregate_over_validation(&[result(vec![0.3, -2.0]), result(vec![-0.3, 2.0])]).unwrap();
        assert_eq!(agg.scores, vec![0.0, 0.0]);
        assert_eq!(agg.validation_size, 2);
    }

    #[test]
    fn heterogeneous_inputs_rejected() {
        let mut other = result(vec![1.0, 1.0]);
        other.method.num_classes = 3;
        assert!(aggregate_over_validation(&[result(vec![1.0, 1.0]), other]).is_err());
        assert!(aggregate_over_validation(&[result(vec![1.0]), result(vec![1.0, 2.0])]).is_err());
        assert!(aggregate_over_validation(&[]).is_err());
    }

    #[test]
    fn json_layout() {
        let json = serde_json::to_value(result(vec![0.5])).unwrap();
        assert_eq!(json["method"]["utility"]["kind"], "tknn");
        assert_eq!(json["method"]["utility"]["tau"], -0.5);
        assert_eq!(json["scores"][0], 0.5);
        assert!(json["method"].get("privacy").is_none());
    }
}

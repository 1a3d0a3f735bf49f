use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

type WeightFn = dyn Fn(usize, usize) -> f64 + Send + Sync;

/// Coalition-size weight `w(k)` of a semivalue over `n` players.
///
/// A semivalue is `phi_i = (1/n) * sum_k w(k) * sum_{|S| = k-1, i not in S} [v(S+i) - v(S)]`
/// with the normalization `sum_k C(n-1, k-1) w(k) = n`.
#[derive(Clone)]
pub enum SemivalueWeight {
    Shapley,
    Banzhaf,
    /// `f(n, k)` returns `w(k)` for a game with `n` players.
    Custom(Arc<WeightFn>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Shapley,
    Banzhaf,
    Custom,
}

impl fmt::Debug for SemivalueWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind())
    }
}

/// `C(n, k)` as a float; exact while the value fits in 53 bits.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 60 {
        let mut acc: u128 = 1;
        for j in 0..k {
            acc = acc * (n - j) as u128 / (j + 1) as u128;
        }
        acc as f64
    } else {
        ln_binomial(n as u64, k as u64).exp()
    }
}

impl SemivalueWeight {
    pub fn custom(f: impl Fn(usize, usize) -> f64 + Send + Sync + 'static) -> Self {
        SemivalueWeight::Custom(Arc::new(f))
    }

    pub fn kind(&self) -> WeightKind {
        match self {
            SemivalueWeight::Shapley => WeightKind::Shapley,
            SemivalueWeight::Banzhaf => WeightKind::Banzhaf,
            SemivalueWeight::Custom(_) => WeightKind::Custom,
        }
    }

    /// `w(k)` for `k` in `1..=n`.
    pub fn weight(&self, n: usize, k: usize) -> f64 {
        match self {
            SemivalueWeight::Shapley => 1.0 / binomial(n - 1, k - 1),
            SemivalueWeight::Banzhaf => n as f64 / 2f64.powi(n as i32 - 1),
            SemivalueWeight::Custom(f) => f(n, k),
        }
    }

    /// `C(n-1, k-1) * w(k)`: total weight on coalitions of size `k - 1`.
    /// Evaluated in log space so it stays finite for large `n`.
    pub fn coalition_mass(&self, n: usize, k: usize) -> f64 {
        match self {
            SemivalueWeight::Shapley => 1.0,
            SemivalueWeight::Banzhaf => {
                let ln = ln_binomial(n as u64 - 1, k as u64 - 1) - (n as f64 - 1.0) * std::f64::consts::LN_2;
                n as f64 * ln.exp()
            }
            SemivalueWeight::Custom(f) => {
                let w = f(n, k);
                if w == 0.0 {
                    0.0
                } else {
                    w.signum() * (ln_binomial(n as u64 - 1, k as u64 - 1) + w.abs().ln()).exp()
                }
            }
        }
    }

    /// Checks `sum_k C(n-1, k-1) w(k) = n` to a relative `1e-9`.
    pub fn check_normalized(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let total: f64 = (1..=n).map(|k| self.coalition_mass(n, k)).sum();
        if ((total - n as f64) / n as f64).abs() > 1e-9 {
            return Err(Error::param(
                "weight",
                format!("coalition weights sum to {total}, expected {n}"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_weights_are_normalized() {
        for n in [1, 2, 5, 20, 300, 1000] {
            SemivalueWeight::Shapley.check_normalized(n).unwrap();
            SemivalueWeight::Banzhaf.check_normalized(n).unwrap();
        }
    }

    #[test]
    fn unnormalized_custom_rejected() {
        let w = SemivalueWeight::custom(|_, _| 1.0);
        assert!(w.check_normalized(4).is_err());
        // constant w(k) = n / 2^(n-1) is Banzhaf in disguise
        let banzhaf = SemivalueWeight::custom(|n, _| n as f64 / 2f64.powi(n as i32 - 1));
        banzhaf.check_normalized(6).unwrap();
    }

    #[test]
    fn mass_matches_direct_product() {
        let n = 12;
        for k in 1..=n {
            let direct = binomial(n - 1, k - 1) * SemivalueWeight::Banzhaf.weight(n, k);
            let mass = SemivalueWeight::Banzhaf.coalition_mass(n, k);
            assert!((direct - mass).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(60, 30), 118264581564861424.0);
    }
}

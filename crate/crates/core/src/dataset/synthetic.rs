use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// `n` points from a standard `d`-dimensional Gaussian; the label is 1 when
/// the coordinates sum to a positive number and 0 otherwise.
pub fn generate_gaussian_synthetic(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    let mut rng = rng::stream(seed, &[rng::tag::SYNTHETIC]);
    let features: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let labels = features
        .chunks_exact(d)
        .map(|row| usize::from(row.iter().sum::<f64>() > 0.0))
        .collect();
    Dataset::from_parts(features, labels, d, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_determinism() {
        let a = generate_gaussian_synthetic(1000, 10, 3).unwrap();
        let b = generate_gaussian_synthetic(1000, 10, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_gaussian_synthetic(1000, 10, 4).unwrap());
    }

    #[test]
    fn labels_follow_sign_of_sum() {
        let ds = generate_gaussian_synthetic(500, 3, 9).unwrap();
        for p in ds.iter() {
            let s: f64 = p.features.iter().sum();
            assert_eq!(p.label, usize::from(s > 0.0));
            if p.features.iter().all(|&v| v > 0.0) {
                assert_eq!(p.label, 1);
            }
        }
    }

    #[test]
    fn classes_are_balanced() {
        // Binomial(1000, 1/2) has sd ~15.8; the +-50 band is > 3 sd.
        let ds = generate_gaussian_synthetic(1000, 10, 21).unwrap();
        let ones = ds.labels().iter().filter(|&&l| l == 1).count();
        assert!((450..=550).contains(&ones), "{ones}");
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(generate_gaussian_synthetic(0, 3, 1).is_err());
        assert!(generate_gaussian_synthetic(3, 0, 1).is_err());
    }
}

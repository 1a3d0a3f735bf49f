//! Shared fixtures for the criterion benches.

use tknn_core::dataset::generate_gaussian_synthetic;
use tknn_core::rng::derive_seed;
use tknn_core::Dataset;

/// Synthetic train and validation sets of the given sizes.
pub fn fixture(n: usize, n_val: usize, d: usize, seed: u64) -> (Dataset, Dataset) {
    let train = generate_gaussian_synthetic(n, d, derive_seed(seed, &[0])).expect("n and d are positive");
    let val = generate_gaussian_synthetic(n_val, d, derive_seed(seed, &[1])).expect("n_val and d are positive");
    (train, val)
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_shapes() {
        let (t, v) = super::fixture(30, 4, 3, 1);
        assert_eq!((t.len(), v.len(), t.dim()), (30, 4, 3));
    }
}

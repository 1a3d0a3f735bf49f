//! Deterministic seed derivation.
//!
//! Every randomized component receives its own ChaCha stream keyed by the
//! master seed plus a path of integers (validation index, mechanism tag, ...),
//! so adding work never shifts the draws of earlier work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const SUBSAMPLE: u64 = 1;
    pub const COUNT_NOISE: u64 = 2;
    pub const SCORE_NOISE: u64 = 3;
    pub const CORRUPTION: u64 = 4;
    pub const SHADOW: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master` to produce an independent child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

//! Seed derivation and the random streams behind every sampled quantity.
//!
//! All randomness flows from `ChaCha20Rng::seed_from_u64`, whose output is
//! specified by the ChaCha20 stream cipher and is identical on every
//! platform. Gaussian variates use `rand_distr::StandardNormal` (ziggurat),
//! which is value-stable within a `rand_distr` minor series.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// One step of the SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a list of integer labels.
///
/// `derive_seed(base, &[n, trial])` is the per-trial seed used by the Monte
/// Carlo harness: each label is folded in with a SplitMix64 round, so the
/// result depends on the order of labels and never on scheduling.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

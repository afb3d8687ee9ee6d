//! Seedable, splittable random number streams.
//!
//! All randomness in the crate flows from a single master seed. Independent
//! streams are derived from `(master seed, stream index)` using the ChaCha
//! counter-based generator, so multi-track simulations and parallel Monte
//! Carlo reductions are reproducible regardless of scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Root generator for a master seed (stream 0).
pub fn master(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`.
///
/// Streams with distinct indices never overlap.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.into());
    rng
}

/// Derive a sub-seed for an independent component (splitmix64 step).
///
/// Used where a component takes a seed of its own, e.g. per-replicate
/// covariate generation, so that replicates neither collide with each other
/// nor with the master streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ (index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

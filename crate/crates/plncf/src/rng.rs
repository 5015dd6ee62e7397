//! Seed derivation and generator construction.
//!
//! Every random decision in the pipeline flows from an explicit `u64` seed
//! through [`derive_seed`], so independent stages (init, shuffling, negative
//! sampling, clustering restarts, t-SNE init) consume disjoint streams even
//! when they share one run seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Stable across platforms and releases.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a base seed and a textual tag.
///
/// Distinct tags give statistically independent streams; the same
/// `(base, tag)` pair always yields the same seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = splitmix64(base ^ 0xA076_1D64_78BD_642F);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// Construct the pipeline's generator from a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Deterministic seed derivation. Every random stream in the crate is a
//! ChaCha8 generator keyed by a value derived here, so results depend only on
//! the configured seeds and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream label.
pub fn derive(seed: u64, stream: &str) -> u64 {
    stream
        .bytes()
        .fold(mix(seed), |acc, b| mix(acc ^ u64::from(b)))
}

pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    mix(derive(seed, stream) ^ mix(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Counter-based seed derivation.
//!
//! `derive_seed(master, [i0, i1, ...])` folds each stream index into the
//! master seed with the SplitMix64 finaliser:
//!
//! ```text
//! s = mix(master)
//! for i in streams: s = mix(s ^ mix(i + 0x9E3779B97F4A7C15))
//! ```
//!
//! and the generator is `ChaCha20Rng::seed_from_u64(s)`. Both steps are fixed
//! integer arithmetic, so streams replay identically on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(mix(master), |s, &i| mix(s ^ mix(i.wrapping_add(GOLDEN_GAMMA))))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generator for stream `streams` of `master`.
pub fn split_seed(master: u64, streams: &[u64]) -> ChaCha20Rng {
    rng_from_seed(derive_seed(master, streams))
}

//! Seed-stream helpers.
//!
//! Every stochastic operation in this crate takes an explicit seed and
//! derives an independent counter-based stream from it, so runs are
//! bit-identical across platforms and thread counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer, used to mix seed material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream from a base seed and a tag path.
///
/// Distinct tag paths give statistically independent streams; the same
/// path always gives the same stream.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = mix(seed);
    for &t in tags {
        s = mix(s ^ t);
    }
    ChaCha8Rng::seed_from_u64(s)
}

/// Derive a child seed rather than a full RNG (for passing down APIs that
/// take seeds).
pub fn child_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut s = mix(seed);
    for &t in tags {
        s = mix(s ^ t);
    }
    s
}

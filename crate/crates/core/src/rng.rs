//! Deterministic random sub-streams.
//!
//! All randomness in the crate flows from named sub-streams derived from a
//! master seed. A sub-stream is identified by a string domain plus an index
//! (typically an era number or a member counter), so independent pieces of
//! work can draw random numbers in parallel without sharing mutable state and
//! without the schedule of the thread pool affecting the result.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a full-avalanche mix of one 64-bit word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the sub-stream seed for `(seed, domain, index)`.
pub fn sub_seed(seed: u64, domain: &str, index: u64) -> u64 {
    // FNV-1a over the domain bytes, folded into the master seed, then two
    // SplitMix64 rounds so adjacent indices land far apart.
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in domain.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}

/// A fresh generator for the named sub-stream.
pub fn sub_rng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, domain, index))
}

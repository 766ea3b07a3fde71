//! Deterministic random stream derivation.
//!
//! All sampling in the crate draws from ChaCha streams derived from a base
//! seed plus a purpose tag and context values (epoch, pair id, batch index).
//! Because every stream is derived independently instead of consumed from one
//! mutable generator, resuming a run from a checkpoint replays the exact
//! sampling of the uninterrupted run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping unrelated streams disjoint.
pub mod purpose {
    pub const SPLIT: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const TOY: u64 = 3;
    pub const EPOCH_ORDER: u64 = 4;
    pub const VIOLATIONS: u64 = 5;
    pub const BATCH_SHUFFLE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const BOOTSTRAP: u64 = 8;
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator from a base seed and context tags.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &t in tags {
        h = mix(h.rotate_left(17) ^ mix(t));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stable 64-bit hash for string ids (FNV-1a).
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers derived from
//! a master seed, so results never depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a path of tags.
pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(parent), |acc, &t| {
        mix64(acc ^ mix64(t.wrapping_add(GOLDEN)))
    })
}

/// Order-independent hash of a set of identifiers.
pub fn set_key(ids: &[u64]) -> u64 {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    derive(sorted.len() as u64, &sorted)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, kept distinct so unrelated streams never collide.
pub mod tag {
    pub const BATH: u64 = 1;
    pub const SUBGROUP: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const NORMAL: u64 = 4;
    pub const INTERNAL: u64 = 5;
    pub const TYPICALITY: u64 = 6;
    pub const REALIZATION: u64 = 7;
    pub const REPETITION: u64 = 8;
    pub const CELL: u64 = 9;
}

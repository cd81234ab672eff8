//! Seed expansion.
//!
//! Every random stream in the toolkit is a SplitMix64 generator
//! (state += 0x9E3779B97F4A7C15; z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//! z = (z ^ z>>27) * 0x94D049BB133111EB; out = z ^ z>>31) whose initial state
//! is derived from the single top-level seed and a fixed stream tag:
//!
//! ```text
//! derive_seed(seed, tag) = first output of SplitMix64(state = seed ^ (tag * 0x9E3779B97F4A7C15))
//! ```
//!
//! Index permutations (splits, shuffles) use [`permutation`], a Fisher-Yates
//! shuffle drawing `j = (next_u64() * (i + 1)) >> 64` for `i = n-1 .. 1`, so
//! they are reproducible from the generator alone.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type StreamRng = SplitMix64;

/// Fixed stream tags.
pub mod stream {
    pub const DATA_TRAIN: u64 = 1;
    pub const DATA_TEST: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const MIXUP: u64 = 6;
    pub const CORRUPT: u64 = 7;
    pub const CENTERS: u64 = 8;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    SplitMix64::seed_from_u64(seed ^ tag.wrapping_mul(GOLDEN)).next_u64()
}

pub fn stream_rng(seed: u64, tag: u64) -> StreamRng {
    SplitMix64::seed_from_u64(derive_seed(seed, tag))
}

/// Uniform index in `0..bound` by multiply-shift.
pub fn bounded(rng: &mut impl RngCore, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

pub fn permutation(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = bounded(rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

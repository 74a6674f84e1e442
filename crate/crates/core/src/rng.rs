//! Seed derivation for reproducible random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose seed is a
//! SplitMix64 mix of the master seed, a purpose tag, and (where relevant) the
//! particle id and iteration. Streams therefore do not depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const TAG_INIT: u64 = 0x1;
pub const TAG_PERTURB: u64 = 0x2;
pub const TAG_MH_FILTER: u64 = 0x3;
pub const TAG_MH_CHAIN: u64 = 0x4;
pub const TAG_LANGEVIN: u64 = 0x5;
pub const TAG_SPLIT: u64 = 0x6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, parts))
}

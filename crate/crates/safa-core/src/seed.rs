//! Deterministic seed derivation.
//!
//! Every random draw in the toolkit comes from a stream seeded by mixing the
//! run seed with structural coordinates (step index, subview index, trial
//! index, ...). Streams are therefore independent of thread count and of the
//! order in which work items execute.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a list of structural coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &c in coords {
        s = splitmix64(s ^ c.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    s
}

/// RNG for a derived stream.
pub fn stream_rng(master: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, coords))
}

//! Deterministic seed derivation.
//!
//! Every random subsystem (sketch maps, parameter init, batch sampling,
//! synthetic data, ...) draws from its own ChaCha stream derived from
//! (master seed, purpose tag), so adding or reordering one consumer never
//! perturbs another. Tags are part of the reproducibility contract.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the tag, mixed with the master seed, then a splitmix64
/// finalizer so nearby master seeds do not yield nearby streams.
pub fn derive(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag))
}

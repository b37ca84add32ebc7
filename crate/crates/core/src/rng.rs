//! Deterministic random streams.
//!
//! Every random draw comes from a ChaCha8 stream keyed by a master seed and a
//! path of integers, e.g. `[BOOTSTRAP, r]` for bootstrap replication `r`, or
//! `[MC_DATA, i]` for the data of Monte Carlo repetition `i`. Keys are
//! expanded with SplitMix64, so streams for distinct paths are independent
//! and a replication's draws never depend on which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const BOOTSTRAP: u64 = 1;
pub const MC_DATA: u64 = 2;
pub const MC_TEST: u64 = 3;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for a path below `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p.wrapping_add(h))))
}

/// Independent stream for `path` below `seed`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut h = derive_seed(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

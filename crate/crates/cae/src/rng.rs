//! Counter-keyed random number streams.
//!
//! Every source of randomness in the crate is keyed by `(seed, stream, index)`
//! so that results are independent of thread count and evaluation order:
//! parallel workers derive their own stream instead of sharing a sequential
//! generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logical randomness streams. The numeric tags are part of the on-disk
/// reproducibility contract and must not be reordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    DataGen = 1,
    Shuffle = 2,
    KMeans = 3,
    Noise = 4,
    Finetune = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a deterministic generator for `(seed, stream, index)`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f);
    state = state.wrapping_add(splitmix64(&mut { index ^ 0x2545_f491_4f6c_dd1d }));
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, e.g. a per-image k-means seed from an evaluation seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut s = seed ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut s)
}

//! Counter-based random number provisioning.
//!
//! Every consumer of randomness draws from a sub-stream keyed by
//! `(seed, path index, stream id)`. Sub-streams are independent ChaCha
//! generators whose keys are derived by a splitmix avalanche, so batches are
//! order-independent: path `p` sees the same numbers whether it is simulated
//! first, last, or in parallel.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id for exit-time draws.
pub const STREAM_EXIT: u64 = 0;
/// Stream id base for per-period Brownian drivers; period `k` (1-based) uses
/// `STREAM_DRIVER_BASE + k`.
pub const STREAM_DRIVER_BASE: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, path, stream)`.
pub fn substream(seed: u64, path: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ 0xa076_1d64_78bd_642f);
    state = splitmix64(state ^ path.wrapping_mul(0xe703_7ed1_a0b4_28db));
    state = splitmix64(state ^ stream.wrapping_mul(0x8ebc_6af0_9c88_c6e3));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

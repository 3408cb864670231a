//! Counter-based random streams.
//!
//! Every random decision in the crate draws from a ChaCha stream addressed by
//! `(seed, stream id)`. Callers that need independent substreams (bootstrap
//! resamples, per-group shuffles, per-job noise) derive them by index instead
//! of sharing a mutable generator, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved per subsystem. The low 32 bits carry a caller index.
pub mod streams {
    pub const SPLIT: u64 = 1 << 32;
    pub const SAMPLER: u64 = 2 << 32;
    pub const DONOR_SHUFFLE: u64 = 3 << 32;
    pub const MIX: u64 = 4 << 32;
    pub const FRD_HALVES: u64 = 5 << 32;
    pub const BOOTSTRAP: u64 = 6 << 32;
    pub const PHANTOM: u64 = 7 << 32;
}

/// Generator for `seed` positioned at the start of stream `stream`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Distinct per-index seeds derived from one base seed.
///
/// `mix64` is bijective and the pre-image `seed + (index + 1) * GOLDEN` is
/// injective in `index`, so seeds never collide within one base seed.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

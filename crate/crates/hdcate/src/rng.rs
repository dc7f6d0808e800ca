//! Deterministic random-number streams.
//!
//! Every source of randomness in the crate is a pure function of a root seed,
//! a purpose tag, and an index. Streams for distinct (purpose, index) pairs
//! are independent ChaCha streams of the same seeded generator, so parallel
//! workers can draw from disjoint streams in any order without affecting
//! results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the per-seed stream space.
pub mod purpose {
    pub const DGP: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const REPLICATION: u64 = 4;
    pub const RETRY: u64 = 5;
}

/// Generator for stream `(purpose, index)` under `seed`.
///
/// Purposes are kept far apart in the 64-bit stream space so that indices up
/// to 2^48 never collide across purposes.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | index);
    rng
}

/// Derives a child seed from a root seed and an index (splitmix64 finalizer).
pub fn child_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

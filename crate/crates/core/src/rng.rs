//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from a single user-supplied `u64` seed
//! through [`derive_seed`]. Sub-computations (folds, repeats, replicates,
//! proposal searches) each get their own derived seed so they are
//! independently reproducible and insensitive to execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix one `u64` into another (splitmix64 finalizer).
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a sequence of tags.
///
/// The same `(base, tags)` always yields the same child; distinct tags
/// yield (with overwhelming probability) distinct children.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0xa076_1d64_78bd_642f)));
    }
    state
}

/// Seeded RNG used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

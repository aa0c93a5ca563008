//! Deterministic derivation of independent RNG streams from a single run seed.
//!
//! Every source of randomness in a run is a [`ChaCha8Rng`] seeded through
//! [`derive_seed`], keyed by a namespace tag plus the indices that identify the
//! consumer (episode, trial, draw, ...). Streams for distinct keys are
//! statistically independent, so work items can run in any order, or in
//! parallel, without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a sequence of tags into a new 64-bit seed.
///
/// Uses the SplitMix64 finalizer; stable across platforms and releases.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &tag in tags {
        state = splitmix(state.wrapping_add(tag).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    splitmix(state)
}

/// A seeded RNG for the stream identified by `(base, tags)`.
pub fn stream_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// FNV-1a hash of a label, for keying streams by group name.
pub fn hash_label(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

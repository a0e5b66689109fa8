//! Deterministic seed derivation.
//!
//! Every random draw in a run flows from one master seed through labeled
//! streams, so runs are reproducible bit-for-bit across platforms and so
//! independent pieces of a run (per-round collection, per-member training,
//! evaluation) never share a stream. Derivation is SplitMix64 applied to the
//! parent seed, a label hash, and an index; streams are ChaCha8, whose output
//! is stable across architectures.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(parent: u64, word: u64) -> u64 {
    splitmix64(parent ^ splitmix64(word))
}

/// Derives a child seed from a parent seed, a stream label, and an index.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a over the label bytes
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(mix(parent, h), index)
}

/// ChaCha8 stream for a derived seed.
pub fn stream(parent: u64, label: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label, index))
}

/// Stream indexed by two coordinates, e.g. (round, member).
pub fn stream2(parent: u64, label: &str, i: u64, j: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(derive(parent, label, i), j))
}

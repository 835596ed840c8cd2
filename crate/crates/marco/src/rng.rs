//! Seeded random-number helpers.
//!
//! Everything stochastic in the library flows through [`ChaCha8Rng`]
//! seeded from a `u64`, so runs are reproducible bit-for-bit across
//! platforms. Child streams (per-thread, per-instance, per-epoch) are
//! derived with [`child_seed`], which mixes a label into the parent seed
//! instead of drawing from the parent stream — that keeps the child
//! seeds independent of how many values the parent has produced so far.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Build a reproducible generator from a bare seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer: a cheap bijective mixer with good avalanche,
/// used to decorrelate structured seed inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string, for turning labels into seed material.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed, a textual label, and an index.
///
/// The same `(parent, label, index)` triple always yields the same child
/// seed, and distinct triples yield (with overwhelming probability)
/// distinct streams. Labels keep unrelated subsystems from colliding
/// even when they use the same index ranges.
pub fn child_seed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(parent ^ fnv1a(label.as_bytes()).rotate_left(17) ^ splitmix64(index.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// Convenience: a generator for a derived stream.
pub fn child_rng(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(child_seed(parent, label, index))
}

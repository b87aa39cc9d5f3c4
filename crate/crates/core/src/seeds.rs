//! Seed derivation.
//!
//! Every random decision in the pipeline flows from one root seed. Subsystems
//! (data building, parameter init, sampling, per-epoch shuffles) derive their
//! own stream seed as `stable_hash64` over the root seed plus a label, so runs
//! are reproducible and independent of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over length-prefixed parts. Stable across platforms and releases,
/// unlike `std::hash`.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for part in parts {
        eat(&(part.len() as u64).to_le_bytes());
        eat(part);
    }
    h
}

/// Seed for a named subsystem stream.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    stable_hash64(&[&root.to_le_bytes(), label.as_bytes()])
}

/// Seed for the `n`-th occurrence of a named stream (epoch reshuffles,
/// per-step dropout masks).
pub fn derive_seed_n(root: u64, label: &str, n: u64) -> u64 {
    stable_hash64(&[&root.to_le_bytes(), label.as_bytes(), &n.to_le_bytes()])
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

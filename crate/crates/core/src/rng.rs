//! Seed derivation. Every stochastic operation owns a named stream derived
//! from the root seed, and each resampling replicate gets its own generator
//! derived from (stream, replicate index). Results are therefore identical
//! regardless of record order, thread schedule, or which other operations ran
//! first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed for a named operation stream from the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the root seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(root ^ h)
}

/// Derive the seed for one replicate (or trial) within a stream.
pub fn replicate_seed(stream: u64, index: u64) -> u64 {
    splitmix64(stream.wrapping_add(splitmix64(index.wrapping_add(1))))
}

/// Construct the generator for a derived seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

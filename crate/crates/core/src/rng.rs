//! Seed derivation for independent, order-free random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams so that unrelated consumers never share random draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    Dynamics = 2,
    Explore = 3,
    Init = 4,
    Replay = 5,
    Collection = 6,
    Evaluation = 7,
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with any number of coordinates into a new seed.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn substream(seed: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(stream as u64);
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive(seed, &all))
}

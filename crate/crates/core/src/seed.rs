//! Seeded random sub-streams.
//!
//! Every consumer of randomness derives its own stream from a root seed and a
//! purpose tag, so adding a consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for the sub-stream `(root, tag, index)`.
pub fn derive(root: u64, tag: &str, index: u64) -> u64 {
    mix(mix(root ^ tag_hash(tag)).wrapping_add(index))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn substream(root: u64, tag: &str, index: u64) -> Rng {
    rng(derive(root, tag, index))
}

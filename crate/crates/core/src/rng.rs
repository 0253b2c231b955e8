//! Seed derivation and counter-based generators.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! 64-bit seed. Child seeds are derived by hashing `(parent, stream, index)`
//! so that work split across threads never depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named seed streams. Collection and evaluation never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Warmup = 1,
    Rollout = 2,
    Evaluation = 3,
    Training = 4,
    Init = 5,
    Session = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed.
pub fn derive(parent: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(parent ^ splitmix64(stream as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

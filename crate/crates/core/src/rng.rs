//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from a
//! base seed and a stream id, so results depend only on (seed, stream) and
//! never on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named stream ids for the blocks of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Weights = 1,
    Theta = 2,
    Beta = 3,
    Alpha = 4,
    Frailty = 5,
    Tau = 6,
    Range = 7,
    Selection = 8,
    Prerun = 16,
    Simulation = 32,
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn block_stream(seed: u64, s: Stream) -> StreamRng {
    stream(seed, s as u64)
}

/// Derives an independent seed for replicate `index` of a study.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over (base, index).
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

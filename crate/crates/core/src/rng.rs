//! Deterministic stream splitting.
//!
//! A master seed is combined with a run index and a component tag through a
//! SplitMix64 mixer; the result seeds an independent ChaCha8 stream. Streams
//! for different `(run, tag)` pairs never share state, so runs can execute on
//! any thread in any order and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Component tags used when splitting a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Learner,
    Environment,
    Sampler,
    Baseline,
    Verify,
    Custom(u64),
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::Learner => 1,
            StreamTag::Environment => 2,
            StreamTag::Sampler => 3,
            StreamTag::Baseline => 4,
            StreamTag::Verify => 5,
            StreamTag::Custom(c) => 0x100 + c,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream `(master, run, tag)`.
pub fn stream_seed(master: u64, run: u64, tag: StreamTag) -> u64 {
    splitmix(splitmix(splitmix(master) ^ run) ^ tag.code())
}

pub fn stream(master: u64, run: u64, tag: StreamTag) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, run, tag))
}

/// The two independent streams a single run consumes: one for the learner's
/// own randomness, one for the environment's noise.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub learner: StreamRng,
    pub env: StreamRng,
}

impl RunStreams {
    pub fn new(master: u64, run: u64) -> Self {
        Self {
            learner: stream(master, run, StreamTag::Learner),
            env: stream(master, run, StreamTag::Environment),
        }
    }
}

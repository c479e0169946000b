//! Seed splitting.
//!
//! Every random stream in a run is derived from one `u64` seed. A stream is a
//! ChaCha8 generator keyed by the seed with its 64-bit stream id set to
//! `(tag << 32) | index`, where `tag` names the consumer and `index`
//! distinguishes instances (for example one traffic stream per user). Streams
//! never share state, so adding or removing a consumer cannot shift the draws
//! seen by any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum StreamTag {
    /// Per-user packet arrivals; index = global user index.
    Traffic = 1,
    /// Per-slot fading gains.
    Channel = 2,
    /// Network weight initialization.
    Init = 3,
    /// Exploration noise and epsilon-greedy draws.
    Exploration = 4,
    /// Replay minibatch sampling.
    Replay = 5,
    /// Standalone sampler statistics.
    Calibration = 6,
}

pub fn stream(seed: u64, tag: StreamTag, index: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 32) | index as u64);
    rng
}

//! Named random sub-streams derived from one master seed.
//!
//! Each stochastic decision in a run draws from the stream that names it,
//! so adding draws to one stream never perturbs another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifies one independent random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrivals(usize),
    Speeds(usize),
    PacketLengths,
    HeartbeatOffsets,
    Backoff,
    StdmaSelection,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Arrivals(lane) => 0x100 + lane as u64,
            Stream::Speeds(lane) => 0x200 + lane as u64,
            Stream::PacketLengths => 0x300,
            Stream::HeartbeatOffsets => 0x400,
            Stream::Backoff => 0x500,
            Stream::StdmaSelection => 0x600,
        }
    }
}

/// Build the generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Source of uniform integer draws used by the slot-selection rules.
///
/// Kept as a narrow trait so tests can replay a scripted sequence of draws.
pub trait SlotRng {
    /// Uniform integer in `0..n`; `n > 0`.
    fn below(&mut self, n: usize) -> usize;
}

impl<R: Rng> SlotRng for R {
    fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.random_range(0..n)
    }
}

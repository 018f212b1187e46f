//! Sub-seeding. Every random stream in a run derives from one top-level
//! seed: the stream is a ChaCha8 generator seeded with that seed and set to
//! a fixed stream id per purpose, so rerunning one stage alone replays
//! exactly the numbers it saw inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    InitConventional = 2,
    InitAdaptive = 3,
    UniformSampler = 4,
    ReversedSampler = 5,
    Noise = 6,
    CmlInit = 7,
    CmlSampler = 8,
    Synthetic = 9,
    Subsample = 10,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

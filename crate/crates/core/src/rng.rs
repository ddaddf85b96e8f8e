//! Deterministic random substreams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the run
//! seed and a stream id `(purpose, sample, step)`. Work on one sample's cloud
//! consumes its stream in particle-index order, so results do not depend on
//! how samples are distributed over worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

/// What a stream is used for; part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    InitSample = 1,
    InitParticles = 2,
    Langevin = 3,
    Mala = 4,
    Resample = 5,
    Exact = 6,
    Projection = 7,
    Split = 8,
    Experiment = 9,
}

/// Root of the per-run stream family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(purpose, sample, step)`.
    pub fn substream(&self, purpose: Purpose, sample: u64, step: u64) -> Prng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(purpose, sample, step));
        rng
    }
}

fn stream_id(purpose: Purpose, sample: u64, step: u64) -> u64 {
    let mut h = splitmix(purpose as u64 ^ 0x9E37_79B9_7F4A_7C15);
    h = splitmix(h ^ sample);
    splitmix(h ^ step.rotate_left(32))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Named random sub-streams derived from one campaign seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FuzzRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Havoc = 1,
    Splice = 2,
    Scheduler = 3,
    Mutation = 4,
}

/// Independent ChaCha stream for `(seed, stream)`.
pub fn stream(seed: u64, stream: Stream) -> FuzzRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

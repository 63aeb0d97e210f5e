//! Reproducible random streams.
//!
//! Every stochastic routine takes a `(seed, index)` pair and draws from
//! ChaCha8 keyed by `seed` on stream `index`. ChaCha is counter based, so
//! stream `i` is independent of how many other streams exist or which
//! worker thread consumes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a fresh seed for a nested stream family from `rng`.
pub fn child_seed<R: rand::Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

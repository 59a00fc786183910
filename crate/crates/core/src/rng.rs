//! Reproducible random number generation.
//!
//! Monte Carlo runs derive one generator per replicate from a master seed
//! and the replicate index, so replicate `i` produces identical draws no
//! matter how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Generator for the top-level (non-replicated) part of a run.
pub fn master_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for replicate `index` of a run with the given master seed.
///
/// Uses a distinct ChaCha stream per replicate; streams never overlap, and
/// the mapping depends only on `(seed, index)`.
pub fn replicate_rng(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is the master stream; replicates start at 1.
    rng.set_stream(index.wrapping_add(1));
    rng
}

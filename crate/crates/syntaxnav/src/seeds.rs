//! Named deterministic RNG substreams derived from one master seed, so
//! world generation, parameter init and per-episode rollouts can be varied
//! independently without touching each other's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::nnmath::fnv1a64;

pub fn substream(seed: u64, purpose: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(fnv1a64(format!("{seed}/{purpose}/{index}").as_bytes()))
}

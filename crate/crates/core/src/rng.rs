//! Seedable random substreams.
//!
//! Every stochastic quantity in the crate is drawn from a ChaCha8 stream
//! selected by `(seed, stream)`, so results never depend on scheduling order
//! when trials run on a worker pool.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for the `index`-th task of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // Stream 0 stays reserved for callers that draw directly from `seed`.
    substream(seed, index.wrapping_add(1)).next_u64()
}

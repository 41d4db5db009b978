//! Seeded random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair so
//! that replications, batches and noise draws are reproducible regardless
//! of the order in which they are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Combines a tag and an index into one stream id.
pub fn stream_id(tag: u32, index: u64) -> u64 {
    ((tag as u64) << 40) ^ index
}

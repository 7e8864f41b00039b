//! Seeded, splittable random streams.
//!
//! All randomness flows from one user seed through ChaCha streams: stream 0
//! is reserved for structural draws (sparsity patterns, design matrices),
//! stream `1 + i` drives replication `i`. Any replication is therefore
//! reproducible in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STRUCTURE_STREAM: u64 = 0;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.into());
    rng
}

pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    stream_rng(seed, 1 + replication)
}

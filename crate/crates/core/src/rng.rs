//! Deterministic random streams: one ChaCha stream per work chunk, so results do
//! not depend on how chunks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per chunk for chunked Monte Carlo loops.
pub const CHUNK: usize = 1 << 14;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Splits `n` into chunk lengths of at most [`CHUNK`].
pub fn chunks(n: usize) -> Vec<usize> {
    let mut out = vec![CHUNK; n / CHUNK];
    if n % CHUNK != 0 {
        out.push(n % CHUNK);
    }
    out
}

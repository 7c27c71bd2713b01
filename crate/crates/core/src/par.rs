//! Seeded, thread-count independent parallel work splitting.
//!
//! Work is cut into fixed-size chunks and chunk `i` always draws from ChaCha
//! stream `i` of the run seed, so results depend on `(seed, chunk size)` only,
//! never on how many worker threads execute them. Partial results come back
//! in chunk order for a deterministic merge.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `work(chunk_index, range, rng)` over `0..total` in chunks of
/// `chunk_size`, returning the per-chunk results in chunk order.
pub fn map_chunks<T, F>(total: usize, chunk_size: usize, seed: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>, &mut ChaCha8Rng) -> T + Sync,
{
    let chunk_size = chunk_size.max(1);
    let chunks = total.div_ceil(chunk_size);
    (0..chunks)
        .into_par_iter()
        .map(|i| {
            let start = i * chunk_size;
            let end = (start + chunk_size).min(total);
            let mut rng = stream_rng(seed, i as u64);
            work(i, start..end, &mut rng)
        })
        .collect()
}

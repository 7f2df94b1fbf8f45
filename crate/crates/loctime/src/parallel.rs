//! Deterministic chunked parallel map over path indices.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Paths per chunk. Chunk boundaries are fixed, so merged results do not
/// depend on the worker count.
pub const CHUNK: u64 = 4096;

/// Applies `work` to consecutive index ranges covering `0..n` and returns the
/// results in range order.
pub fn map_chunks<T, F>(n: u64, workers: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync,
{
    let chunks: Vec<Range<u64>> = (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect();
    if workers <= 1 {
        return Ok(chunks.into_iter().map(work).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| chunks.into_par_iter().map(&work).collect()))
}

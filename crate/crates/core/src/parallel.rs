//! Deterministic parallel reductions.
//!
//! Work is split into fixed-size chunks whose boundaries depend only on the
//! input length. Chunks are reduced in parallel and the partial results are
//! combined sequentially in chunk order, so the result is bit-identical for
//! any number of worker threads.

use std::ops::{Add, Range};

use rayon::prelude::*;

/// Number of items per reduction chunk.
pub const CHUNK: usize = 4096;

/// Reduce `0..len` chunk by chunk with `f`, then fold the partials in order.
pub fn chunked_sum<T, F>(len: usize, f: F) -> T
where
    T: Add<Output = T> + Default + Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let n_chunks = len.div_ceil(CHUNK);
    let partials: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    partials.into_iter().fold(T::default(), |acc, x| acc + x)
}

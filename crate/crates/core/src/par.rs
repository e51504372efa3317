//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it
//! they run the same closures in order. Reductions are split into
//! fixed-size chunks whose partial sums are added sequentially, so the
//! floating-point result never depends on scheduling.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per partial sum in [`chunked_sum`].
pub const SUM_CHUNK: usize = 4096;

// Rows handed to one rayon task at minimum; keeps tiny grids from
// drowning in scheduling overhead.
#[cfg(feature = "parallel")]
fn min_rows(cols: usize) -> usize {
    (2048 / cols.max(1)).max(1)
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Calls `f(row, out_row)` for every row of a row-major buffer.
pub fn rows<F>(out: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(cols)
        .with_min_len(min_rows(cols))
        .enumerate()
        .for_each(|(i, r)| f(i, r));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(cols).enumerate().for_each(|(i, r)| f(i, r));
}

/// Row loop over two output buffers of identical shape.
pub fn rows2<F>(a: &mut [f64], b: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Send + Sync,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    a.par_chunks_mut(cols)
        .zip(b.par_chunks_mut(cols))
        .with_min_len(min_rows(cols))
        .enumerate()
        .for_each(|(i, (ra, rb))| f(i, ra, rb));
    #[cfg(not(feature = "parallel"))]
    a.chunks_mut(cols)
        .zip(b.chunks_mut(cols))
        .enumerate()
        .for_each(|(i, (ra, rb))| f(i, ra, rb));
}

/// Row loop over three output buffers of identical shape.
pub fn rows3<F>(a: &mut [f64], b: &mut [f64], c: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Send + Sync,
{
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    #[cfg(feature = "parallel")]
    a.par_chunks_mut(cols)
        .zip(b.par_chunks_mut(cols))
        .zip(c.par_chunks_mut(cols))
        .with_min_len(min_rows(cols))
        .enumerate()
        .for_each(|(i, ((ra, rb), rc))| f(i, ra, rb, rc));
    #[cfg(not(feature = "parallel"))]
    a.chunks_mut(cols)
        .zip(b.chunks_mut(cols))
        .zip(c.chunks_mut(cols))
        .enumerate()
        .for_each(|(i, ((ra, rb), rc))| f(i, ra, rb, rc));
}

/// Sums `f` over consecutive index ranges of length [`SUM_CHUNK`] covering `0..len`.
///
/// Partial sums are combined left to right, which makes the result
/// independent of the thread count.
pub fn chunked_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Send + Sync,
{
    let n_chunks = len.div_ceil(SUM_CHUNK);
    let range = |k: usize| k * SUM_CHUNK..((k + 1) * SUM_CHUNK).min(len);
    #[cfg(feature = "parallel")]
    let partial: Vec<f64> = (0..n_chunks).into_par_iter().map(|k| f(range(k))).collect();
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<f64> = (0..n_chunks).map(|k| f(range(k))).collect();
    partial.into_iter().sum()
}

/// Evaluates `f` on every item, keeping the input order in the output.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}

//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (the default) these fan work out over the
//! rayon global pool; without it they run plain loops. Reductions always
//! happen over a fixed chunk grid folded in chunk order, so results are
//! bit-identical across both modes and any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed row-chunk size for deterministic gradient reduction.
pub const CHUNK_ROWS: usize = 32;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f(row_index, row)` to each `cols`-wide row of a flat matrix.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert!(cols > 0 && data.len().is_multiple_of(cols));
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, row) in data.chunks_mut(cols).enumerate() {
            f(i, row);
        }
    }
}

/// Apply `f(row_index, row_a, row_b)` across two flat matrices with equal
/// row counts.
pub fn for_each_row_pair_mut<F>(a: &mut [f64], cols_a: usize, b: &mut [f64], cols_b: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    debug_assert_eq!(a.len() / cols_a, b.len() / cols_b);
    #[cfg(feature = "parallel")]
    {
        a.par_chunks_mut(cols_a)
            .zip(b.par_chunks_mut(cols_b))
            .enumerate()
            .for_each(|(i, (ra, rb))| f(i, ra, rb));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (ra, rb)) in a.chunks_mut(cols_a).zip(b.chunks_mut(cols_b)).enumerate() {
            f(i, ra, rb);
        }
    }
}

/// Map `f` over fixed-size index chunks of `0..n` and return the partial
/// results in chunk order. Callers fold the partials sequentially; the chunk
/// grid depends only on `n`, never on the thread count.
pub fn map_chunks<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(std::ops::Range<usize>) -> O + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK_ROWS);
    let range_of = |c: usize| (c * CHUNK_ROWS)..((c + 1) * CHUNK_ROWS).min(n);
    #[cfg(feature = "parallel")]
    {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| f(range_of(c)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(|c| f(range_of(c))).collect()
    }
}

/// Number of worker threads in use (1 when the sequential fallback is built).
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Cap the global worker pool. Call once, before any parallel work; returns
/// false if the pool was already initialized. No-op without `parallel`.
pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        true
    }
}

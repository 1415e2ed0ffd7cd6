//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the loops below fan out through rayon;
//! without it they run as plain iterators. Every helper preserves index
//! order, and callers keep all floating-point reductions in fixed order, so
//! the two builds (and any thread count) produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map over `0..n`.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Applies `f(row_index, row)` to each `width`-sized chunk of `buf`.
pub fn for_each_row<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
}

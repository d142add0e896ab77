//! Execution mode for the data-parallel kernels.
//!
//! Kernels split their outputs into fixed-size chunks whose boundaries do not
//! depend on the thread count, and reductions combine per-chunk partials in
//! chunk order. Parallel and sequential execution therefore produce
//! bitwise-identical results; deterministic mode only forces everything onto
//! the calling thread (and serializes independent fits).

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force sequential execution of every kernel and of comparison fits.
pub fn set_deterministic(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

/// True when kernels will actually fan out over rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !is_deterministic()
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk_len`-sized pieces of
/// `out`.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    out.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Map `0..n` through `f`, keeping index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

//! Data-parallel loop helpers.
//!
//! Every parallel loop in the engine writes disjoint output regions and all
//! reductions fold partial results in index order, so parallel and
//! sequential execution produce bit-identical results. The `parallel`
//! feature compiles rayon in; [`set_sequential`] additionally forces the
//! sequential path at runtime (used by `--deterministic` runs and by the
//! benchmarks that compare both paths).

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all parallel helpers onto their sequential fallback.
pub fn set_sequential(sequential: bool) {
    FORCE_SEQUENTIAL.store(sequential, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    if cfg!(feature = "parallel") {
        FORCE_SEQUENTIAL.load(Ordering::SeqCst)
    } else {
        true
    }
}

/// Split `data` into `chunk`-sized pieces and run `f(chunk_index, piece)` on
/// each, in parallel when enabled.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, piece)| f(i, piece));
            return;
        }
    }
    for (i, piece) in data.chunks_mut(chunk).enumerate() {
        f(i, piece);
    }
}

/// Indexed map into an order-preserving `Vec`. Callers reduce the result
/// sequentially so the fold order never depends on scheduling.
pub fn map_collect<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

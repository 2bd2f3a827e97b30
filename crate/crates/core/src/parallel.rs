//! Replicate-parallel evaluation with deterministic results.
//!
//! Each replicate is a pure function of its index, results come back in index
//! order, and reductions happen sequentially afterwards, so the thread count
//! affects wall-clock time only.

use rayon::prelude::*;

/// Evaluates `f(workspace, i)` for `i in 0..n` on `threads` workers and
/// returns the results in index order. Workspaces are per-worker scratch
/// space and must not carry state between calls.
pub fn map_indexed<W, R, I, F>(threads: usize, n: u64, init: I, f: F) -> Vec<R>
where
    R: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, u64) -> R + Sync + Send,
{
    if threads <= 1 {
        let mut w = init();
        return (0..n).map(|i| f(&mut w, i)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| (0..n).into_par_iter().map_init(&init, |w, i| f(w, i)).collect())
}

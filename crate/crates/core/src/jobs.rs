//! Bounded parallel execution of independent tasks.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f(0..n)` on at most `jobs` threads, returning results in index order.
/// With `jobs <= 1` everything runs on the calling thread.
pub fn run_jobs<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

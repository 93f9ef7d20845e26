//! Order-preserving map over an index range.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool; a pool of one thread (or a build without the feature) runs a plain
//! sequential loop. Results always come back in index order so reductions
//! done by the caller are bit-reproducible.

/// Applies `f` to `0..n` and collects the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n > 1 && rayon::current_num_threads() > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Number of worker threads the mapping above would use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` with at most `jobs` worker threads. `jobs == 0` keeps the
/// global pool; `jobs == 1` forces the sequential path.
pub fn with_jobs<R, F>(jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
            log::warn!("could not build a pool of {jobs} threads; using the global pool");
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    f()
}

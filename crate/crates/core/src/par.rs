//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] fans out
//! over rayon's pool; without it both variants run sequentially. Results
//! are always returned in index order, so any reduction performed by the
//! caller is independent of scheduling.

/// How batch work (episodes, per-sample gradients) is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => parallel_map(n, f),
        }
    }

    pub fn map<I, R, F>(self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(usize, &I) -> R + Sync + Send,
    {
        self.map_range(items.len(), |i| f(i, &items[i]))
    }

    /// Whether this build can actually run work in parallel.
    pub fn is_parallel_capable() -> bool {
        cfg!(feature = "parallel")
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Caps the worker pool at `threads` (0 keeps the default). Must run
/// before any parallel work; later calls are rejected.
#[cfg(feature = "parallel")]
pub fn set_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::error::config(format!("cannot size worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn set_threads(_threads: usize) -> crate::Result<()> {
    Ok(())
}

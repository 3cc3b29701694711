//! Batch execution: data-parallel map over independent work items, with a
//! sequential fallback when the `parallel` feature is disabled. Both paths
//! return results in input order, so downstream output is identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_batch<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_batch<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Sequential map with the same signature, kept available under every
/// feature set so benchmarks can compare the two paths directly.
pub fn map_batch_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}


/// Cap the data-parallel worker count. Must run before the first parallel
/// call; later calls are ignored. No-op without the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn configure_parallelism(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn configure_parallelism(_threads: usize) {}

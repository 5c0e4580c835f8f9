//! Execution policy for the data-parallel kernels.
//!
//! Every parallel kernel has a sequential twin that performs the same
//! floating-point operations in the same order per output element, so results
//! are bitwise identical under either policy. Without the `parallel` feature
//! `ExecPolicy::Parallel` silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Spatial entries handled per task in chunked kernels.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    #[default]
    Parallel,
}

impl ExecPolicy {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }
}

/// Calls `f(offset, chunk)` on consecutive chunks of `out`.
pub fn for_each_chunk_mut<F>(policy: ExecPolicy, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if policy.is_parallel() && out.len() > chunk {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k * chunk, c));
        return;
    }
    let _ = policy;
    for (k, c) in out.chunks_mut(chunk).enumerate() {
        f(k * chunk, c);
    }
}

/// Order-preserving map over a slice.
pub fn map_collect<T, R, F>(policy: ExecPolicy, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = policy;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(policy: ExecPolicy, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = policy;
    (0..n).map(f).collect()
}

/// Configures the global worker pool. Returns `false` if it was already built
/// or if the crate was compiled without the `parallel` feature.
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

//! Execution policy for cell loops and deterministic reductions.
//!
//! Reductions are always computed as per-block partial sums combined by
//! pairwise summation in block order, so the result does not depend on the
//! policy or the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block length for partial sums and parallel chunks.
pub const BLOCK: usize = 1024;

/// Work below this many elements always runs sequentially.
pub const PAR_THRESHOLD: usize = 16 * BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether a loop of `len` elements should fan out.
    #[inline]
    pub fn fans_out(self, len: usize) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel && len >= PAR_THRESHOLD
    }
}

/// Pairwise (cascade) summation of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Deterministic sum of `f(k)` for `k in 0..len`.
pub fn sum_indexed<F>(exec: Exec, len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let nblocks = len.div_ceil(BLOCK);
    let block_sum = |b: usize| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(len);
        let vals: Vec<f64> = (lo..hi).map(&f).collect();
        pairwise_sum(&vals)
    };
    let partials: Vec<f64> = if exec.fans_out(len) {
        #[cfg(feature = "parallel")]
        {
            (0..nblocks).into_par_iter().map(block_sum).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..nblocks).map(block_sum).collect()
        }
    } else {
        (0..nblocks).map(block_sum).collect()
    };
    pairwise_sum(&partials)
}

/// Fills `out[k] = f(k)`.
pub fn fill_indexed<F>(exec: Exec, out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    if exec.fans_out(out.len()) {
        #[cfg(feature = "parallel")]
        {
            out.par_chunks_mut(BLOCK)
                .enumerate()
                .for_each(|(b, chunk)| {
                    let base = b * BLOCK;
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = f(base + k);
                    }
                });
            return;
        }
    }
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = f(k);
    }
}

/// Calls `f(start, chunk)` on consecutive chunks of `out` covering it, in
/// parallel blocks when fanning out. Kernels walk their own index within a
/// chunk, so index arithmetic is paid once per chunk.
pub fn fill_chunks<F>(exec: Exec, out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if exec.fans_out(out.len()) {
        #[cfg(feature = "parallel")]
        {
            out.par_chunks_mut(BLOCK)
                .enumerate()
                .for_each(|(b, chunk)| f(b * BLOCK, chunk));
            return;
        }
    }
    f(0, out);
}

/// Deterministic maximum of `f(k)`; `-inf` for an empty range.
pub fn max_indexed<F>(exec: Exec, len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if exec.fans_out(len) {
        #[cfg(feature = "parallel")]
        {
            return (0..len)
                .into_par_iter()
                .map(&f)
                .reduce(|| f64::NEG_INFINITY, f64::max);
        }
    }
    (0..len).map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// Componentwise maximum of a pair-valued `f` over `0..len`.
pub fn max2_indexed<F>(exec: Exec, len: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> (f64, f64) + Sync,
{
    let neg = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let join = |a: (f64, f64), b: (f64, f64)| (a.0.max(b.0), a.1.max(b.1));
    if exec.fans_out(len) {
        #[cfg(feature = "parallel")]
        {
            return (0..len).into_par_iter().map(&f).reduce(|| neg, join);
        }
    }
    (0..len).map(f).fold(neg, join)
}

/// Maps `f` over `items` on the global pool when the `parallel` feature is on.
/// Output order matches input order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if items.len() > 1 {
        return items.par_iter().map(&f).collect();
    }
    items.iter().map(f).collect()
}

/// Maps `f` over `items`, concurrently when the `parallel` feature is on and
/// `jobs > 1`. Output order matches input order.
pub fn map_jobs<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 && items.len() > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

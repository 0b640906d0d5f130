//! Execution strategy for data-parallel inner loops.
//!
//! Hot kernels are written once, generic over an [`Executor`]. [`Par`] splits
//! the output into disjoint chunks and hands them to rayon when the
//! `parallel` feature is enabled; without the feature it degrades to [`Seq`].
//! Every chunk is owned by exactly one task, so parallel and sequential runs
//! produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub trait Executor {
    /// Split `data` into chunks of `chunk_len` and run `f(chunk_index, chunk)`
    /// on each. Chunks are disjoint; `f` must not rely on execution order.
    fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send;

    /// Evaluate `f(0..n)` and collect the results in index order.
    fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Parallel execution (rayon) when the `parallel` feature is on, otherwise
/// identical to [`Seq`].
pub struct Par;

/// Always-sequential execution; the fallback body used by [`Par`] without
/// the feature, kept public so benchmarks can compare both paths.
pub struct Seq;

impl Executor for Seq {
    fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    }

    fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[cfg(feature = "parallel")]
impl Executor for Par {
    fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }

    fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
impl Executor for Par {
    fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        Seq::for_each_chunk_mut(data, chunk_len, f);
    }

    fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        Seq::map_indexed(n, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_agree() {
        let mut a = vec![0u32; 1024];
        let mut b = vec![0u32; 1024];
        Par::for_each_chunk_mut(&mut a, 32, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 31 + j) as u32;
            }
        });
        Seq::for_each_chunk_mut(&mut b, 32, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 31 + j) as u32;
            }
        });
        assert_eq!(a, b);
    }

    #[test]
    fn map_indexed_order() {
        let v = Par::map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }
}

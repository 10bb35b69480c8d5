//! Execution strategy for the data-parallel kernels.
//!
//! Every kernel in this crate writes each output slot from its own input
//! slot only, so the choice of strategy never changes results. With the
//! `parallel` feature disabled, [`Exec::Parallel`] degrades to the
//! sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Fills `out[i] = f(i)`.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
            return;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }

    /// Replaces `out[i]` with `f(i, &out[i])`.
    pub fn update<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &T) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i, v));
            return;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i, v);
        }
    }

    /// Like [`Exec::fill`] but stops at the first error; the lowest failing
    /// index wins so the reported error is independent of scheduling.
    pub fn try_fill<T, E, F>(self, out: &mut [T], f: F) -> Result<(), E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let errs: Vec<(usize, E)> = out
                .par_iter_mut()
                .enumerate()
                .filter_map(|(i, v)| match f(i) {
                    Ok(x) => {
                        *v = x;
                        None
                    }
                    Err(e) => Some((i, e)),
                })
                .collect();
            return match errs.into_iter().min_by_key(|(i, _)| *i) {
                Some((_, e)) => Err(e),
                None => Ok(()),
            };
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i)?;
        }
        Ok(())
    }

    /// Applies `f` to consecutive chunks of `out` of length `chunk`, passing
    /// the chunk index.
    pub fn for_chunks<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }

    /// Maps `0..len` and collects in index order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Runs `op` on a dedicated pool of `threads` workers when parallel,
    /// otherwise runs it inline.
    pub fn with_threads<R: Send>(self, threads: Option<usize>, op: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let (true, Some(t)) = (self.is_parallel(), threads) {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
                return pool.install(op);
            }
        }
        let _ = threads;
        op()
    }
}

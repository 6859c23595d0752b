//! Data-parallel execution of independent work items.
//!
//! Every parallel loop in the crate goes through [`Executor::map`], which
//! returns results in index order. Work items draw their randomness from keyed
//! streams, so the output is identical for any thread count, including the
//! sequential fallback used when the `parallel` feature is off.

use std::fmt;
use std::sync::Arc;

#[derive(Clone, Default)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Executor({} threads)", self.threads())
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor::default()
    }

    /// A pool of `threads` workers; `threads <= 1` (or a build without the
    /// `parallel` feature) runs on the calling thread.
    pub fn with_threads(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if threads > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(|i| format!("cep-worker-{i}"))
                    .build()
                    .expect("thread pool");
                return Executor { pool: Some(Arc::new(pool)) };
            }
        }
        let _ = threads;
        Executor::sequential()
    }

    pub fn threads(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    pub fn is_parallel(&self) -> bool {
        self.threads() > 1
    }

    /// `(0..n).map(f)` with results in index order.
    pub fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Like [`Executor::map`] but stops at the first error in index order.
    pub fn try_map<R, E, F>(&self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        for ex in [Executor::sequential(), Executor::with_threads(4)] {
            let v = ex.map(100, |i| i * i);
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn first_error_in_index_order() {
        let ex = Executor::with_threads(3);
        let r: Result<Vec<usize>, usize> = ex.try_map(10, |i| if i % 4 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed-size pool for independent fitness evaluations. Results always come
/// back in input order, so the thread count never influences outcomes.
#[derive(Debug)]
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("evoad-worker-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Applies `f(index, item)` to every item concurrently.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.pool
            .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let pool = WorkerPool::new(3).unwrap();
        let items: Vec<u64> = (0..100).collect();
        let out = pool.map(&items, |i, &x| (i as u64) * 1000 + x * x);
        assert_eq!(out, (0..100).map(|x| x * 1000 + x * x).collect::<Vec<_>>());
        assert!(WorkerPool::new(0).is_err());
    }
}

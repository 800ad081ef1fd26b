//! Thread-pool executor for the core's indexed work items.

use rayon::prelude::*;
use stumpage_core::Executor;

use crate::error::{CliError, Result};

/// Runs work items on a dedicated rayon pool of a fixed size. Results come
/// back in index order, so output never depends on the thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
        Ok(Parallel { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stumpage_core::Sequential;

    #[test]
    fn matches_sequential_order() {
        let f = |i: usize| i * i + 1;
        let seq = Sequential.map_indices(1000, f);
        for threads in [1, 3, 8] {
            assert_eq!(Parallel::new(threads).unwrap().map_indices(1000, f), seq);
        }
    }

    #[test]
    fn zero_threads_is_rejected() {
        assert!(Parallel::new(0).is_err());
    }
}

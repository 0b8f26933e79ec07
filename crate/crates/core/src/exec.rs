//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work items are spread over the
//! rayon pool; without it every map runs on the calling thread. Results
//! are always returned in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Runs `f` with at most `jobs` worker threads. `None` keeps the global
    /// pool.
    pub fn with_jobs<R: Send>(self, jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
        match (self, jobs) {
            #[cfg(feature = "parallel")]
            (Execution::Parallel, Some(n)) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map(|pool| pool.install(f))
                .unwrap_or_else(|e| panic!("cannot build thread pool: {e}")),
            _ => f(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u64> = (0..500).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x);
        let par = Execution::Parallel.map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[499], 499 * 499);
        let capped =
            Execution::Parallel.with_jobs(Some(2), || Execution::Parallel.map(&items, |x| x + 1));
        assert_eq!(capped[0], 1);
    }
}

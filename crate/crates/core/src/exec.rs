//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool; without it everything runs on the calling thread. Results always come
//! back in input order, so any reduction over them is deterministic.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }
}

/// Runs `f` inside a pool with `jobs` worker threads (0 means rayon's default).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
            log::warn!("could not build a {jobs}-thread pool; using the global pool");
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs > 1 {
            log::debug!("built without the `parallel` feature; --jobs {jobs} runs sequentially");
        }
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u64> = (0..100).collect();
        let seq = Execution::Sequential.map(&items, |i, v| v * 3 + i as u64);
        let par = Execution::Parallel.map(&items, |i, v| v * 3 + i as u64);
        assert_eq!(seq, par);
        assert_eq!(with_jobs(2, || Execution::Parallel.map(&items, |_, v| *v)), items);
    }
}

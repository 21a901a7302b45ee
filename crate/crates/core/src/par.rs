//! Order-preserving batch maps.
//!
//! With the `parallel` feature, work runs on a rayon pool sized by
//! [`Execution`]; without it every map is a plain sequential loop. Results
//! are collected in input order either way, so outputs never depend on the
//! worker count or on scheduling.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    /// `None` uses every available core; `Some(1)` forces sequential execution.
    pub workers: Option<usize>,
}

impl Execution {
    pub const SEQUENTIAL: Execution = Execution { workers: Some(1) };

    pub fn with_workers(workers: usize) -> Self {
        Execution {
            workers: Some(workers.max(1)),
        }
    }

    pub fn is_sequential(&self) -> bool {
        !cfg!(feature = "parallel") || self.workers == Some(1)
    }

    /// Applies `f` to every item and returns the results in input order.
    ///
    /// All items are evaluated; if any fail, the error for the earliest
    /// failing item is returned.
    pub fn try_map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        let results = self.map(items, f)?;
        results.into_iter().collect()
    }

    /// Infallible form of [`Execution::try_map`]; the outer `Result` only
    /// reports thread-pool construction failures.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.is_sequential() {
            return Ok(items.iter().map(f).collect());
        }
        self.map_parallel(items, f)
    }

    #[cfg(feature = "parallel")]
    fn map_parallel<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        match self.workers {
            None => Ok(items.par_iter().map(f).collect()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| crate::Error::Domain(format!("thread pool: {e}")))?;
                Ok(pool.install(|| items.par_iter().map(f).collect()))
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn map_parallel<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        Ok(items.iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn order_is_independent_of_workers() {
        let items: Vec<u64> = (0..10_000).collect();
        let seq = Execution::SEQUENTIAL.map(&items, |x| x * x + 1).unwrap();
        for workers in [2, 3, 8] {
            let par = Execution::with_workers(workers)
                .map(&items, |x| x * x + 1)
                .unwrap();
            assert_eq!(seq, par);
        }
        assert_eq!(Execution::default().map(&items, |x| x * x + 1).unwrap(), seq);
    }

    #[test]
    fn earliest_error_wins() {
        let items: Vec<u32> = (0..1000).collect();
        let err = Execution::with_workers(4)
            .try_map(&items, |&x| {
                if x % 100 == 37 {
                    Err(Error::Domain(format!("item {x}")))
                } else {
                    Ok(x)
                }
            })
            .unwrap_err();
        assert_eq!(err.to_string(), "domain error: item 37");
    }
}

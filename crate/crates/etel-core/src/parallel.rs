//! Index-ordered map used by the Monte Carlo driver.
//!
//! With the `parallel` feature the map runs on rayon; without it every
//! execution mode is sequential. Output order always equals index order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    /// Single thread, in index order.
    Sequential,
    /// Rayon's global pool.
    #[default]
    Parallel,
    /// A dedicated pool with the given number of threads.
    Threads(usize),
}

impl Execution {
    /// `Threads(k)` for `Some(k)`, otherwise the global pool.
    pub fn from_threads(threads: Option<usize>) -> Self {
        match threads {
            Some(k) => Execution::Threads(k),
            None => Execution::Parallel,
        }
    }
}

/// True when the crate was built with the rayon backend.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..count).map(f)` collected in index order.
pub fn ordered_map<T, F>(count: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if let Execution::Threads(0) = exec {
        return Err(Error::ConfigError("thread count must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => Ok((0..count).map(f).collect()),
            Execution::Parallel => Ok((0..count).into_par_iter().map(f).collect()),
            Execution::Threads(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::ConfigError(format!("cannot build thread pool: {e}")))?;
                Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        Ok((0..count).map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let want: Vec<usize> = (0..1000).map(|i| i * i).collect();
        for exec in [Execution::Sequential, Execution::Parallel, Execution::Threads(3)] {
            assert_eq!(ordered_map(1000, exec, |i| i * i).unwrap(), want);
        }
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(ordered_map(3, Execution::Threads(0), |i| i).is_err());
    }
}

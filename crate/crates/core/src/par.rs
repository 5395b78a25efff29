//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature off every [`Execution`] runs sequentially.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// `threads: None` uses the global pool.
    #[default]
    Parallel,
    Threads(usize),
}

impl Execution {
    pub fn from_threads(n: Option<usize>) -> Self {
        match n {
            Some(1) => Execution::Sequential,
            Some(n) if n > 1 => Execution::Threads(n),
            _ => Execution::Parallel,
        }
    }
}

/// `f(0..n)` collected in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => {}
            Execution::Parallel => return (0..n).into_par_iter().map(f).collect(),
            Execution::Threads(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .expect("thread pool");
                return pool.install(|| (0..n).into_par_iter().map(f).collect());
            }
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn map_slice<S, T, F>(items: &[S], exec: Execution, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), exec, |i| f(&items[i]))
}

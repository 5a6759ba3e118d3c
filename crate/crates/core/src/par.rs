//! Bounded data-parallel fan-out.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool
//! sized to the requested parallelism. Without it, or with
//! [`ExecMode::Sequential`], items are processed in order on the calling
//! thread. Output order always matches input order.

#[cfg(feature = "parallel")]
use std::collections::HashMap;
#[cfg(feature = "parallel")]
use std::sync::{Arc, Mutex, OnceLock};

/// How a fan-out is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

#[cfg(feature = "parallel")]
fn pool(threads: usize) -> Arc<rayon::ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = pools.lock().expect("thread pool registry poisoned");
    guard
        .entry(threads)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("kbforge-{threads}-{i}"))
                    .build()
                    .expect("failed to build rayon pool"),
            )
        })
        .clone()
}

/// Map `f` over `items` with at most `max_parallel` concurrent calls.
pub fn map_bounded<T, R, F>(items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_bounded_with(ExecMode::Parallel, items, max_parallel, f)
}

/// Same as [`map_bounded`] with an explicit execution mode.
pub fn map_bounded_with<T, R, F>(mode: ExecMode, items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if mode == ExecMode::Sequential || max_parallel <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let threads = max_parallel.min(items.len());
        pool(threads).install(|| items.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

//! Worker pools for per-sample batch work.

/// Number of workers for a `--mp` style request; 0 means all cores.
pub fn resolve_workers(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    }
}

/// Runs `f` inside a dedicated pool of `workers` threads.
pub fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(workers))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("cannot start worker pool ({e}), running inline");
            f()
        }
    }
}

//! Order-preserving fan-out over scoped threads.

use std::num::NonZeroUsize;

/// Environment variable capping worker threads for window-level work.
pub const WORKERS_ENV: &str = "AMLNET_NUM_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// `items.iter().map(f).collect()` split over up to `workers` threads. The
/// output order is the input order, so results do not depend on scheduling.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..101).collect();
        for workers in [1, 2, 7, 200] {
            assert_eq!(par_map(&xs, workers, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert!(par_map(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }
}

//! Deterministic fork-join over an indexed work list.
//!
//! `indexed_map(n, f)` evaluates `f(0..n)` on up to `available_parallelism`
//! threads and returns the results in index order. Work items must not
//! share mutable state; under that contract the output is identical for
//! every thread count, including one, so parallelism only changes wall
//! time. Callers that seed randomness derive one sub-seed per index, never
//! per thread.

use std::num::NonZeroUsize;

/// Map `f` over `0..n` in parallel, collecting results in index order.
///
/// Panics in `f` are propagated to the caller after all workers stop.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
        .min(n);
    if workers <= 1 {
        return (0..n).map(f).collect();
    }

    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(n).collect();
    std::thread::scope(|scope| {
        // Strided assignment: worker w takes w, w+P, w+2P, ... Work items of
        // a Monte-Carlo or multi-run workload cost the same, so static
        // striding balances without a queue.
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        for handle in handles {
            match handle.join() {
                Ok(pairs) => {
                    for (i, value) in pairs {
                        slots[i] = Some(value);
                    }
                }
                Err(panic) => std::panic::resume_unwind(panic),
            }
        }
    });
    slots.into_iter().map(|v| v.expect("worker covered every index")).collect()
}

/// Split `total` items into chunks of at most `chunk` (last one may be
/// short). The split depends only on the arguments, which keeps per-chunk
/// sub-seeding reproducible.
pub fn chunk_sizes(total: usize, chunk: usize) -> Vec<usize> {
    assert!(chunk >= 1, "chunk size must be positive");
    let full = total / chunk;
    let rest = total % chunk;
    let mut sizes = vec![chunk; full];
    if rest > 0 {
        sizes.push(rest);
    }
    sizes
}

//! Deterministic data-parallel helpers.
//!
//! Work items are pure functions of their index (randomness comes from
//! pre-assigned streams), each output lands in its own slot, and all
//! reductions happen sequentially afterwards — so results are identical for
//! any worker count. `ADDA_THREADS` caps the workers.

/// Worker count: `ADDA_THREADS` if set, else available parallelism, at
/// least one either way.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("ADDA_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

/// Maps `f` over `0..n` into a vector, splitting the range into contiguous
/// chunks across `threads` workers.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads.min(n));
    std::thread::scope(|scope| {
        for (c, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = c * chunk;
                for (i, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(base + i));
                }
            });
        }
    });
    out.into_iter().map(|slot| slot.expect("every slot filled")).collect()
}

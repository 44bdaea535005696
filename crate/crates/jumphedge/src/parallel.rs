//! Deterministic parallel map over independent work items.
//!
//! Results land in a preallocated vector at their own index, so the output is
//! identical whatever the worker count or scheduling order. The worker count
//! is capped by the `JUMPHEDGE_MAX_THREADS` environment variable.

pub const MAX_THREADS_ENV: &str = "JUMPHEDGE_MAX_THREADS";

pub fn worker_count(n_items: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var(MAX_THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or(hw);
    cap.min(hw).min(n_items.max(1))
}

/// Applies `f(index)` for `0..n_items`, returning results in index order.
pub fn map_indexed<T, F>(n_items: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count(n_items);
    if workers <= 1 || n_items <= 1 {
        return (0..n_items).map(f).collect();
    }
    let mut out: Vec<Option<T>> = Vec::with_capacity(n_items);
    out.resize_with(n_items, || None);
    let chunk = n_items.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = w * chunk;
                for (off, cell) in slot.iter_mut().enumerate() {
                    *cell = Some(f(base + off));
                }
            });
        }
    });
    out.into_iter()
        .map(|v| v.expect("worker filled every slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(1000, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn handles_empty_and_single() {
        assert!(map_indexed(0, |i| i).is_empty());
        assert_eq!(map_indexed(1, |i| i + 5), vec![5]);
    }
}

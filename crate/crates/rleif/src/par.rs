//! Order-preserving parallel map helpers.
//!
//! With the `parallel` feature (default) the closure runs on the rayon
//! thread pool; without it the same code runs sequentially. Output order
//! always matches input order, so for pure per-item closures the two paths
//! produce identical results and nothing downstream can observe scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, handing each call the item index. Output order
/// matches input order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_ordered_seq(items, f)
    }
}

/// Sequential reference implementation of [`map_ordered`]. Always available
/// so benchmarks and tests can compare the two paths directly.
pub fn map_ordered_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Like [`map_ordered`] but with at most `bound` items in flight at once.
/// Used for remote-backend calls where the concurrency cap is part of the
/// run configuration. `bound == 0` is treated as 1.
pub fn map_ordered_bounded<T, R, F>(items: &[T], bound: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let bound = bound.max(1);
    let mut out = Vec::with_capacity(items.len());
    for (chunk_idx, chunk) in items.chunks(bound).enumerate() {
        let base = chunk_idx * bound;
        out.extend(map_ordered(chunk, |i, t| f(base + i, t)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |i: usize, x: &u64| (i as u64).wrapping_mul(31).wrapping_add(*x);
        assert_eq!(map_ordered(&items, f), map_ordered_seq(&items, f));
    }

    #[test]
    fn bounded_preserves_order_and_indices() {
        let items: Vec<u32> = (0..17).collect();
        let out = map_ordered_bounded(&items, 4, |i, x| (i, *x));
        for (i, (idx, x)) in out.iter().enumerate() {
            assert_eq!(*idx, i);
            assert_eq!(*x as usize, i);
        }
    }

    #[test]
    fn bounded_handles_zero_bound() {
        let items = vec![1, 2, 3];
        assert_eq!(map_ordered_bounded(&items, 0, |_, x| *x), vec![1, 2, 3]);
    }
}

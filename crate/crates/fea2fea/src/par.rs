//! Thin dispatch layer between the rayon-backed and sequential execution
//! paths.
//!
//! Everything embarrassingly parallel in the crate (per-node feature
//! extraction, independent training tasks in a correlation sweep) funnels
//! through these helpers. With the default `parallel` feature the work is
//! spread over the ambient rayon pool; without it the same closures run on
//! the calling thread. Results are collected in index order either way, so
//! output is byte-identical across both paths and any thread count.

/// Applies `f` to every index in `0..n`, sequentially. This is the baseline
/// the benchmarks compare against and the only path in `--no-default-features`
/// builds.
pub fn map_range_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Applies `f` to every item, sequentially.
pub fn map_items_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    map_range_seq(n, f)
}

#[cfg(feature = "parallel")]
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_items_seq(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_on_order() {
        let a = map_range(100, |i| i * i);
        let b = map_range_seq(100, |i| i * i);
        assert_eq!(a, b);
    }

    #[test]
    fn item_mapping_preserves_order() {
        let items: Vec<u64> = (0..50).collect();
        let a = map_items(&items, |&x| x * 3);
        let b = map_items_seq(&items, |&x| x * 3);
        assert_eq!(a, b);
    }
}

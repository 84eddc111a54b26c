//! Episode-level execution: data-parallel map over independent work items.
//!
//! All Monte-Carlo style loops in this crate (rollout collection, evaluation,
//! baseline tuning grids, oracle sampling) are maps over an index range where
//! item `i` owns its own RNG stream. Results come back positionally, so the
//! output is identical whether the map ran on one thread or many.
//!
//! With the `parallel` feature (default) [`map_indexed`] fans out over the
//! rayon pool; without it the crate compiles with no rayon dependency and
//! falls back to the sequential loop. [`map_indexed_seq`] is always available
//! so benchmarks can compare both paths in a single build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, parallel when the `parallel` feature is enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Sequential reference path for [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_positionally() {
        let f = |i: usize| (i as f64).sqrt() * 3.0 - 1.0;
        assert_eq!(map_indexed(257, f), map_indexed_seq(257, f));
    }

    #[test]
    fn empty_range_yields_empty_vec() {
        assert!(map_indexed(0, |i| i).is_empty());
    }
}

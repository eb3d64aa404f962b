//! Data-parallel helpers.
//!
//! Every parallel map here is index-ordered: results come back in input
//! order, and reductions are performed sequentially over per-chunk partials.
//! Outputs are therefore bit-identical for any worker count, and identical
//! to the sequential fallback.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of paths handled by one work item.
pub const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    /// Rayon when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Ordered map over `0..n`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Ordered map over items of a slice.
    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Ordered map over mutable items of a slice.
    pub fn map_slice_mut<S, T, F>(self, items: &mut [S], f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(&mut S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter_mut().map(f).collect();
        }
        items.iter_mut().map(f).collect()
    }
}

/// Split `0..n` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_everything_once() {
        let r = chunk_ranges(1030, 512);
        assert_eq!(r, vec![0..512, 512..1024, 1024..1030]);
        assert!(chunk_ranges(0, 512).is_empty());
    }

    #[test]
    fn parallel_and_sequential_maps_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Exec::Parallel.map(10_000, f);
        let b = Exec::Sequential.map(10_000, f);
        assert_eq!(a, b);
    }
}

//! Execution strategy for data-parallel loops.
//!
//! `Exec::Parallel` runs on the rayon global pool when the `parallel` feature
//! is compiled in, and degrades to the sequential path otherwise. Reductions
//! are split into fixed-size chunks that are combined in chunk order, so
//! results (including floating-point sums) do not depend on thread count or
//! scheduling.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`Exec::fold_chunks`] callers that have no better
/// choice.
pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this strategy will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over indices `0..n`.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps each `chunk`-sized slice (with its chunk index), in chunk order.
    pub fn map_chunks<T, U, F>(self, items: &[T], chunk: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T]) -> U + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect();
        }
        items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }

    /// Folds each `chunk`-sized slice independently, then merges the partial
    /// results left to right in chunk order.
    pub fn fold_chunks<T, A, Init, Fold, Merge>(
        self,
        items: &[T],
        chunk: usize,
        init: Init,
        fold: Fold,
        merge: Merge,
    ) -> A
    where
        T: Sync,
        A: Send,
        Init: Fn() -> A + Sync + Send,
        Fold: Fn(A, usize, &T) -> A + Sync + Send,
        Merge: Fn(A, A) -> A,
    {
        let chunk = chunk.max(1);
        let partials = self.map_chunks(items, chunk, |ci, part| {
            let base = ci * chunk;
            part.iter()
                .enumerate()
                .fold(init(), |acc, (i, item)| fold(acc, base + i, item))
        });
        partials.into_iter().fold(init(), merge)
    }
}

//! Data-parallel map over independent work items, with a sequential fallback.
//!
//! Item results are collected in input order, so both execution modes produce
//! identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

pub fn map_indexed<R, F>(par: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..n).into_par_iter().map(f).collect(),
    }
}

pub fn map_items<T, R, F>(par: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match par {
        Parallelism::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => items.par_iter().map(f).collect(),
    }
}

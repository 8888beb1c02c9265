//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in the crate goes through `map_indexed`, which maps
//! `0..n` to a `Vec` preserving index order. Order-preserving collection
//! keeps results bit-identical whether the `parallel` feature is on or off;
//! reductions over the results are always performed sequentially by the
//! caller.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

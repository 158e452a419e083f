//! Data-parallel helpers.
//!
//! Every parallel map collects into a `Vec` in input order, and every
//! reduction over those results is done sequentially afterwards, so the
//! numeric output does not depend on the thread count or on whether the
//! `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
///
/// `Parallel` silently degrades to `Sequential` when the crate is built
/// without the `parallel` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when this mode actually fans out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Ordered map over a slice.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Ordered map over `0..n`.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Left-to-right sum; fixed order keeps results bit-identical across modes.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sqrt().sin()).collect();
        let seq = map_slice(Execution::Sequential, &xs, |x| x * 1.000_1);
        let par = map_slice(Execution::Parallel, &xs, |x| x * 1.000_1);
        assert_eq!(ordered_sum(&seq).to_bits(), ordered_sum(&par).to_bits());
        assert_eq!(
            map_range(Execution::Sequential, 17, |i| i * i),
            map_range(Execution::Parallel, 17, |i| i * i)
        );
    }
}

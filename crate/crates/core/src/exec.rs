//! Sequential / data-parallel execution switch.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] runs
//! sequentially. Every parallel path collects results in input order, so both
//! modes produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

impl std::str::FromStr for Execution {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sequential" => Ok(Execution::Sequential),
            "parallel" => Ok(Execution::Parallel),
            _ => Err(crate::Error::Config(format!(
                "unknown execution mode `{s}`"
            ))),
        }
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel, preserving order.
pub(crate) fn map_range<R, F>(mode: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel, preserving order.
pub(crate) fn map_slice<T, R, F>(mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Minimum of `f(i)` over `0..n` under a total order key, first index winning ties.
pub(crate) fn min_by_range<R, F, K>(mode: Execution, n: usize, f: F, key: K) -> Option<(usize, R)>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
    K: Fn(&R, &R) -> std::cmp::Ordering + Sync + Send,
{
    let pick = |a: (usize, R), b: (usize, R)| match key(&a.1, &b.1).then(a.0.cmp(&b.0)) {
        std::cmp::Ordering::Greater => b,
        _ => a,
    };
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(|i| (i, f(i))).reduce_with(pick);
    }
    let _ = mode;
    (0..n).map(|i| (i, f(i))).reduce(pick)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_range(Execution::Sequential, 100, |i| i * i);
        let par = map_range(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        let vals = [3.0, 1.0, 5.0, 1.0];
        for mode in [Execution::Sequential, Execution::Parallel] {
            let best = min_by_range(mode, 4, |i| vals[i], |a: &f64, b| a.total_cmp(b));
            assert_eq!(best, Some((1, 1.0)));
        }
    }
}

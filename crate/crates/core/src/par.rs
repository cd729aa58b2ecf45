// SPDX-License-Identifier: Apache-2.0

//! Serial/parallel execution switch.
//!
//! Callers choose [`Execution`] per call. With the `parallel` feature off,
//! `Execution::Parallel` silently runs serially, so results never depend on
//! the build. Every helper here preserves input order in its output.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this request actually fans out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving fallible map; the first error by index wins.
pub fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

/// Work size (multiply-adds) above which `matmul_bt` splits its rows.
#[cfg(feature = "parallel")]
const PAR_KERNEL_THRESHOLD: usize = 1 << 21;

/// Runs `f(row, first_col, cells)` over `out`, viewed as rows of `row_len`,
/// where `cells` is the slice of row `row` starting at column `first_col`.
/// Large jobs are split into column blocks across the rayon pool.
pub(crate) fn for_each_block<F>(out: &mut [f32], row_len: usize, work: usize, f: F)
where
    F: Fn(usize, usize, &mut [f32]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if work >= PAR_KERNEL_THRESHOLD {
        use rayon::prelude::*;
        // Token counts are small while output widths (vocabulary, d_ff) are
        // large, so split inside rows as well.
        let block = (row_len / rayon::current_num_threads().max(1)).max(64);
        out.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| {
            row.par_chunks_mut(block)
                .enumerate()
                .for_each(|(b, part)| f(i, b * block, part));
        });
        return;
    }
    let _ = work;
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, 0, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u32> = (0..1000).collect();
        let serial = map(Execution::Serial, &items, |x| x * 3);
        let parallel = map(Execution::Parallel, &items, |x| x * 3);
        assert_eq!(serial, parallel);
        assert_eq!(serial[999], 2997);
    }

    #[test]
    fn try_map_reports_lowest_index_error() {
        let items: Vec<u32> = (0..100).collect();
        let r: Result<Vec<u32>, u32> = try_map(Execution::Parallel, &items, |&x| {
            if x % 10 == 7 {
                Err(x)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(7));
    }
}

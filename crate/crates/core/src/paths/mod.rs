//! Seedable generation of Brownian, Poisson, Lévy, hitting-time and Euler
//! diffusion paths on configurable time grids.

mod bundle;
mod grid;
mod levy;
mod sde;
mod simulate;

use rayon::prelude::*;

pub use bundle::{AuxTable, BundleMeta, PathBundle, PathView};
pub use grid::{geometric_ratio_for_last_step, make_grid, Refinement, TimeGrid};
pub use levy::{simulate_levy, JumpLaw, LevyKind, LevyModel};
pub use sde::{simulate_sde_euler, SdeOptions, DEFAULT_DRIFT_CLIP};
pub use simulate::{
    hitting_time_unit, poisson_nth_arrival, sample_hitting_time_unit, simulate_brownian, simulate_poisson,
    simulate_poisson_order_statistics, simulate_poisson_with_nth,
};

/// Contiguous range of global path indices.
///
/// Path `i` always draws from stream `i`, so a run split into several ranges
/// reproduces the paths of a single run exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathRange {
    pub start: u64,
    pub count: usize,
}

impl PathRange {
    pub fn new(start: u64, count: usize) -> Self {
        Self { start, count }
    }

    pub fn ids(self) -> impl Iterator<Item = u64> {
        self.start..self.start + self.count as u64
    }

    /// Consecutive sub-ranges of at most `size` paths.
    pub fn chunks(self, size: usize) -> impl Iterator<Item = PathRange> {
        let size = size.max(1);
        (0..self.count).step_by(size).map(move |off| PathRange {
            start: self.start + off as u64,
            count: size.min(self.count - off),
        })
    }
}

impl From<usize> for PathRange {
    fn from(count: usize) -> Self {
        Self { start: 0, count }
    }
}

/// Runs `f` for each path id in parallel, returning results in path order.
pub(crate) fn par_map_paths<T, G>(range: PathRange, f: G) -> Vec<T>
where
    T: Send,
    G: Fn(u64) -> T + Sync + Send,
{
    (0..range.count).into_par_iter().map(|i| f(range.start + i as u64)).collect()
}

/// Fills row-major `rows` (one row per path) in parallel.
pub(crate) fn par_fill_rows<F, T, G>(range: PathRange, width: usize, f: G) -> (Vec<F>, Vec<T>)
where
    F: Send + Copy + Default,
    T: Send,
    G: Fn(u64, &mut [F]) -> T + Sync + Send,
{
    let mut values = vec![F::default(); range.count * width];
    let extras: Vec<T> = values
        .par_chunks_mut(width)
        .enumerate()
        .map(|(i, row)| f(range.start + i as u64, row))
        .collect();
    (values, extras)
}

#[cfg(test)]
mod tests {
    use super::PathRange;

    #[test]
    fn chunks_cover_range() {
        let r = PathRange::new(10, 25);
        let parts: Vec<PathRange> = r.chunks(10).collect();
        assert_eq!(parts, vec![PathRange::new(10, 10), PathRange::new(20, 10), PathRange::new(30, 5)]);
        let ids: Vec<u64> = parts.iter().flat_map(|p| p.ids()).collect();
        assert_eq!(ids, r.ids().collect::<Vec<_>>());
    }
}

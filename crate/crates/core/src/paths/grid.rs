use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Real;

/// How grid points are spread over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refinement<F> {
    Uniform,
    /// Step sizes shrink by `ratio` from one step to the next, so the grid
    /// concentrates toward `T`.
    Geometric { ratio: F },
    /// Every step but the last covers the fraction `1 - ratio` of the time
    /// still remaining: `t_i = T (1 - ratio^i)` for `i < N`. The final step
    /// spans the whole remainder `T ratio^(N-1)`, so integrators that stop
    /// before `T` never see a step that is large relative to the time left.
    Graded { ratio: F },
    /// Union of other grids; only strict monotonicity is guaranteed.
    Merged,
}

impl<F: Real> Refinement<F> {
    /// Geometric refinement whose step-to-remaining-time ratio is about
    /// `8 / n_steps`, so the final step shrinks like `T e^{-8} / n_steps`.
    pub fn geometric_for(n_steps: usize) -> Self {
        let shrink = (8.0 / n_steps.max(1) as f64).min(0.5);
        Refinement::Geometric { ratio: F::lit(1.0 - shrink) }
    }

    /// Graded refinement leaving `T / n_steps^2` between the last interior
    /// node and `T`.
    pub fn graded_for(n_steps: usize) -> Self {
        let n = n_steps.max(2) as f64;
        Refinement::Graded { ratio: F::lit((-2.0 * n.ln() / (n - 1.0)).exp()) }
    }

    /// Graded refinement whose last interior node sits `remainder` before `T`.
    pub fn graded_with_remainder(horizon: F, n_steps: usize, remainder: F) -> Self {
        let n = F::from_count(n_steps.max(2) - 1);
        Refinement::Graded { ratio: ((remainder / horizon).ln() / n).exp() }
    }
}

/// Strictly increasing discretization `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<F> {
    horizon: F,
    points: Vec<F>,
    refinement: Refinement<F>,
}

/// Builds a grid over `[0, horizon]` with `n_steps` steps.
pub fn make_grid<F: Real>(horizon: F, n_steps: usize, refinement: Refinement<F>) -> Result<TimeGrid<F>> {
    ensure!(horizon > F::zero() && horizon.is_finite(), "horizon must be positive, got {horizon}");
    ensure!(n_steps >= 2, "n_steps must be at least 2, got {n_steps}");
    let points = match refinement {
        Refinement::Uniform => {
            let h = horizon / F::from_count(n_steps);
            let mut pts: Vec<F> = (0..n_steps).map(|i| h * F::from_count(i)).collect();
            pts.push(horizon);
            pts
        }
        Refinement::Geometric { ratio } => {
            ensure!(
                ratio > F::zero() && ratio < F::one(),
                "geometric ratio must lie in (0, 1), got {ratio}"
            );
            let n = F::from_count(n_steps);
            let first = horizon * (F::one() - ratio) / (F::one() - ratio.powf(n));
            let mut pts = Vec::with_capacity(n_steps + 1);
            let mut t = F::zero();
            let mut h = first;
            pts.push(t);
            for _ in 1..n_steps {
                t += h;
                pts.push(t);
                h *= ratio;
            }
            pts.push(horizon);
            pts
        }
        Refinement::Graded { ratio } => {
            ensure!(
                ratio > F::zero() && ratio < F::one(),
                "graded ratio must lie in (0, 1), got {ratio}"
            );
            let mut pts = Vec::with_capacity(n_steps + 1);
            let mut remaining = F::one();
            for _ in 0..n_steps {
                pts.push(horizon * (F::one() - remaining));
                remaining *= ratio;
            }
            pts.push(horizon);
            pts
        }
        Refinement::Merged => {
            return Err(crate::error::invalid("merged grids are built with TimeGrid::merged"));
        }
    };
    let grid = TimeGrid { horizon, points, refinement };
    ensure!(grid.is_strictly_increasing(), "grid degenerated (steps below floating point resolution)");
    Ok(grid)
}

/// Geometric ratio for which an `n_steps` grid on `[0, horizon]` ends with a
/// step of length `last_step`; `None` when even the uniform grid is finer.
pub fn geometric_ratio_for_last_step<F: Real>(horizon: F, n_steps: usize, last_step: F) -> Option<F> {
    let n = F::from_count(n_steps);
    if horizon / n <= last_step {
        return None;
    }
    let last = |b: F| horizon * (F::one() - b) * b.powf(n - F::one()) / (F::one() - b.powf(n));
    let (mut lo, mut hi) = (F::lit(1e-6), F::one() - F::lit(1e-12));
    for _ in 0..200 {
        let mid = F::half() * (lo + hi);
        if last(mid) < last_step {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

impl<F: Real> TimeGrid<F> {
    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn points(&self) -> &[F] {
        &self.points
    }

    pub fn refinement(&self) -> Refinement<F> {
        self.refinement
    }

    /// Number of points, i.e. steps + 1.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn steps(&self) -> impl Iterator<Item = F> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }

    fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0] < w[1])
    }

    /// Index of the grid point equal to `t` up to a relative tolerance.
    pub fn index_of(&self, t: F) -> Option<usize> {
        let tol = F::lit(1e-9) * self.horizon.max(F::one());
        let i = self.nearest_index(t);
        ((self.points[i] - t).abs() <= tol).then_some(i)
    }

    pub fn nearest_index(&self, t: F) -> usize {
        match self.points.binary_search_by(|p| p.partial_cmp(&t).expect("finite grid")) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.points.len() => self.points.len() - 1,
            Err(i) => {
                if t - self.points[i - 1] <= self.points[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Index of the last point strictly below `t`.
    pub fn last_index_before(&self, t: F) -> usize {
        self.points.partition_point(|&p| p < t).saturating_sub(1)
    }

    /// Union with `extra` times inside `(0, horizon]`, dropping near-duplicates.
    pub fn merged(&self, extra: &[F]) -> TimeGrid<F> {
        let tol = F::lit(1e-12) * self.horizon.max(F::one());
        let mut pts: Vec<F> = self
            .points
            .iter()
            .copied()
            .chain(extra.iter().copied().filter(|&t| t > F::zero() && t <= self.horizon))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        pts.dedup_by(|b, a| (*b - *a).abs() <= tol);
        TimeGrid { horizon: self.horizon, points: pts, refinement: Refinement::Merged }
    }

    /// Restriction to `[0, end]`, with `end` appended as the new horizon.
    pub fn truncated(&self, end: F) -> TimeGrid<F> {
        if end >= self.horizon {
            return self.clone();
        }
        let mut pts: Vec<F> = self.points.iter().copied().take_while(|&t| t < end).collect();
        pts.push(end);
        TimeGrid { horizon: end, points: pts, refinement: Refinement::Merged }
    }

    pub fn summary(&self) -> String {
        let kind = match self.refinement {
            Refinement::Uniform => "uniform".to_string(),
            Refinement::Geometric { ratio } => format!("geometric(ratio={ratio})"),
            Refinement::Graded { ratio } => format!("graded(ratio={ratio})"),
            Refinement::Merged => "merged".to_string(),
        };
        format!("T={} steps={} {}", self.horizon, self.n_steps(), kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_partitions() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(1.0, 2, Refinement::Uniform).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn geometric_halving_matches_series() {
        // h (1 + 1/2 + 1/4 + 1/8) = 1  =>  h = 8/15
        let g = make_grid(1.0, 4, Refinement::Geometric { ratio: 0.5 }).unwrap();
        let steps: Vec<f64> = g.steps().collect();
        let expected = [8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0];
        for (s, e) in steps.iter().zip(expected) {
            assert_abs_diff_eq!(*s, e, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(steps[3], steps[0] * 0.125, epsilon = 1e-15);
    }

    #[test]
    fn graded_steps_track_remaining_time() {
        let g = make_grid(2.0f64, 6, Refinement::Graded { ratio: 0.5 }).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0, 1.5, 1.75, 1.875, 1.9375, 2.0]);
        let g = make_grid(1.0f64, 4096, Refinement::graded_for(4096)).unwrap();
        let p = g.points();
        let tail = 1.0 - p[p.len() - 2];
        assert!((tail * 4096.0 * 4096.0 - 1.0).abs() < 1e-6, "remainder {tail}");
        for i in 0..p.len() - 2 {
            let ratio = (p[i + 1] - p[i]) / (1.0 - p[i]);
            assert!(ratio < 0.005, "node {i}: {ratio}");
        }
        let g = make_grid(50.0f64, 100, Refinement::graded_with_remainder(50.0, 100, 1e-6)).unwrap();
        let p = g.points();
        assert!(((50.0 - p[p.len() - 2]) / 1e-6 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_grid(0.0, 4, Refinement::Uniform).is_err());
        assert!(make_grid(-1.0, 4, Refinement::Uniform).is_err());
        assert!(make_grid(1.0, 1, Refinement::Uniform).is_err());
        assert!(make_grid(1.0, 4, Refinement::Geometric { ratio: 1.0 }).is_err());
        assert!(make_grid(1.0, 4, Refinement::Geometric { ratio: 0.0 }).is_err());
    }

    #[test]
    fn last_step_solver_hits_target() {
        let beta = geometric_ratio_for_last_step(100.0, 4096, 1e-6).unwrap();
        let g = make_grid(100.0, 4096, Refinement::Geometric { ratio: beta }).unwrap();
        let last: f64 = g.steps().last().unwrap();
        assert!((last / 1e-6 - 1.0).abs() < 1e-3, "last step {last}");
        assert!(geometric_ratio_for_last_step(1.0, 4, 0.5).is_none());
    }

    #[test]
    fn lookup_and_merge() {
        let g = make_grid(1.0, 8, Refinement::Geometric { ratio: 0.8 }).unwrap();
        let m = g.merged(&[0.25, 0.5, 1.0]);
        assert!(m.index_of(0.25).is_some());
        assert!(m.index_of(0.5).is_some());
        assert_eq!(*m.points().last().unwrap(), 1.0);
        assert!(m.points().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m.last_index_before(0.5), m.index_of(0.5).unwrap() - 1);
        let t = m.truncated(0.5);
        assert_eq!(*t.points().last().unwrap(), 0.5);
        assert!(g.index_of(0.123).is_none());
    }

    proptest! {
        #[test]
        fn grids_satisfy_invariants(horizon in 0.1f64..10.0, n in 2usize..2000, shrink in 0.1f64..20.0) {
            let ratio = (1.0 - shrink / n as f64).max(0.5);
            for refinement in [Refinement::Uniform, Refinement::Geometric { ratio }, Refinement::Graded { ratio }] {
                let g = make_grid(horizon, n, refinement).unwrap();
                prop_assert_eq!(g.points()[0], 0.0);
                prop_assert_eq!(*g.points().last().unwrap(), horizon);
                prop_assert_eq!(g.len(), n + 1);
                prop_assert!(g.points().windows(2).all(|w| w[0] < w[1]));
                if let Refinement::Geometric { .. } = refinement {
                    let steps: Vec<f64> = g.steps().collect();
                    // the last step absorbs rounding, so compare up to it loosely
                    prop_assert!(steps[..steps.len() - 1].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
                }
            }
        }
    }
}

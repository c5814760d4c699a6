//! Progressive enlargements by a noisy terminal signal and by a Gaussian
//! process with a prescribed variance schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::initial_enlargement::BridgeScheme;
use crate::paths::{par_fill_rows, AuxTable, BundleMeta, PathBundle, PathRange, TimeGrid};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;
use crate::special::{cumulative_trapezoid, simpson};

/// Piecewise-constant signal volatility on `[0, T]` plus the variance `v0` of
/// the starting value.
///
/// `sigmas[k]` applies on `[breaks[k], breaks[k + 1])`; `breaks` starts at 0
/// and ends at `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule<F> {
    breaks: Vec<F>,
    sigmas: Vec<F>,
    v0: F,
}

impl<F: Real> VarianceSchedule<F> {
    pub fn new(breaks: Vec<F>, sigmas: Vec<F>, v0: F) -> Result<Self> {
        ensure!(breaks.len() >= 2, "need at least one schedule piece");
        ensure!(sigmas.len() + 1 == breaks.len(), "{} pieces but {} volatilities", breaks.len() - 1, sigmas.len());
        ensure!(breaks[0] == F::zero(), "schedule must start at 0, got {}", breaks[0]);
        ensure!(breaks.windows(2).all(|w| w[1] > w[0]), "schedule breakpoints must increase strictly");
        ensure!(breaks.iter().all(|b| b.is_finite()), "schedule breakpoints must be finite");
        ensure!(sigmas.iter().all(|s| s.is_finite() && *s >= F::zero()), "volatilities must be finite and >= 0");
        ensure!(v0.is_finite() && v0 >= F::zero(), "v0 must be finite and >= 0, got {v0}");
        Ok(Self { breaks, sigmas, v0 })
    }

    pub fn constant(horizon: F, sigma: F, v0: F) -> Result<Self> {
        Self::new(vec![F::zero(), horizon], vec![sigma], v0)
    }

    /// `sigma1` on `[0, switch)`, `sigma2` on `[switch, T]`.
    pub fn two_level(horizon: F, switch: F, sigma1: F, sigma2: F, v0: F) -> Result<Self> {
        ensure!(switch > F::zero() && switch < horizon, "switch {switch} must lie inside (0, {horizon})");
        Self::new(vec![F::zero(), switch, horizon], vec![sigma1, sigma2], v0)
    }

    /// Schedule with `v0 = T - total()` so that `v(T) = T`.
    pub fn bridge(breaks: Vec<F>, sigmas: Vec<F>) -> Result<Self> {
        let probe = Self::new(breaks, sigmas, F::zero())?;
        let v0 = probe.horizon() - probe.total();
        ensure!(v0 >= -F::lit(1e-12) * probe.horizon().max(F::one()), "signal variance {} exceeds the horizon {}; no v0 >= 0 gives v(T) = T", probe.total(), probe.horizon());
        Ok(Self { v0: v0.max(F::zero()), ..probe })
    }

    pub fn horizon(&self) -> F {
        *self.breaks.last().expect("non-empty")
    }

    pub fn v0(&self) -> F {
        self.v0
    }

    pub fn breaks(&self) -> &[F] {
        &self.breaks
    }

    pub fn sigma(&self, t: F) -> F {
        let k = self.breaks[1..].iter().position(|&b| t < b).unwrap_or(self.sigmas.len() - 1);
        self.sigmas[k]
    }

    /// `int_0^t sigma^2`, with `t` clamped to `[0, T]`.
    fn cumulative(&self, t: F) -> F {
        let t = t.max(F::zero()).min(self.horizon());
        let mut acc = F::zero();
        for (w, &s) in self.breaks.windows(2).zip(&self.sigmas) {
            if t <= w[0] {
                break;
            }
            acc += s * s * (t.min(w[1]) - w[0]);
        }
        acc
    }

    pub fn total(&self) -> F {
        self.cumulative(self.horizon())
    }

    pub fn v(&self, t: F) -> F {
        self.v0 + self.cumulative(t)
    }

    pub fn tail(&self, t: F) -> F {
        self.total() - self.cumulative(t)
    }

    /// Checks the bridge hypotheses on the nodes of `grid`: `v(T) = T` and
    /// `v(t) > t` before `T`.
    pub fn check_bridge(&self, grid: &TimeGrid<F>) -> Result<()> {
        let horizon = self.horizon();
        ensure!(
            (grid.horizon() - horizon).abs() <= F::lit(1e-12) * horizon.max(F::one()),
            "grid horizon {} differs from schedule horizon {horizon}",
            grid.horizon()
        );
        let gap = self.v(horizon) - horizon;
        ensure!(gap.abs() <= F::lit(1e-9) * horizon.max(F::one()), "bridge needs v(T) = T, got v(T) - T = {gap}");
        for (i, &t) in grid.points().iter().enumerate() {
            if t < horizon {
                ensure!(self.v(t) > t, "v(t) <= t at node {i} (t = {t}, v = {})", self.v(t));
            }
        }
        Ok(())
    }
}

/// `(v_signal - b) / (T + tail_var - t)`.
pub fn noisy_drift<F: Real>(t: F, v_signal: F, b: F, horizon: F, tail_var: F) -> Result<F> {
    let denom = horizon + tail_var - t;
    ensure!(denom > F::zero(), "T + tail - t must be positive, got {denom} at t={t}");
    Ok((v_signal - b) / denom)
}

/// Brownian motion `B`, the noisy signal `V_t = B_T + int_t^T sigma dW` and
/// the innovation `W~_t = B_t - int_0^t noisy_drift du`, all on one grid.
#[derive(Debug, Clone)]
pub struct PeofPaths<F> {
    pub b: PathBundle<F>,
    pub v: PathBundle<F>,
    pub innovation: PathBundle<F>,
}

/// Row-major `[paths x 3 width]` buffer split into three bundles.
fn split3<F: Real>(
    grid: &TimeGrid<F>,
    range: PathRange,
    rows: Vec<F>,
    meta: BundleMeta,
) -> Result<[PathBundle<F>; 3]> {
    let w = grid.len();
    let mut parts = [Vec::with_capacity(range.count * w), Vec::with_capacity(range.count * w), Vec::with_capacity(range.count * w)];
    for row in rows.chunks_exact(3 * w) {
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&row[k * w..(k + 1) * w]);
        }
    }
    let [a, b, c] = parts;
    Ok([
        PathBundle::new(grid.clone(), a, AuxTable::empty(), meta.clone())?,
        PathBundle::new(grid.clone(), b, AuxTable::empty(), meta.clone())?,
        PathBundle::new(grid.clone(), c, AuxTable::empty(), meta)?,
    ])
}

/// Simulates [`PeofPaths`] on a grid ending at the schedule's horizon.
///
/// Signal increments `int sigma dW` over each grid interval are drawn exactly
/// from their Gaussian law. The drift is singular at `T` itself, so the last
/// trapezoid interval reuses the drift of the node before.
pub fn simulate_peof<F: Real>(
    schedule: &VarianceSchedule<F>,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PeofPaths<F>> {
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let horizon = schedule.horizon();
    ensure!(
        (grid.horizon() - horizon).abs() <= F::lit(1e-12) * horizon.max(F::one()),
        "grid horizon {} differs from schedule horizon {horizon}",
        grid.horizon()
    );
    let pts = grid.points();
    let n = pts.len();
    let tails: Vec<F> = pts.iter().map(|&t| schedule.tail(t)).collect();
    let (rows, _) = par_fill_rows(range, 3 * n, |id, row: &mut [F]| {
        let (b, rest) = row.split_at_mut(n);
        let (v, innov) = rest.split_at_mut(n);
        let mut rb = PathRng::new(seed, Domain::Brownian, id);
        let mut rw = PathRng::new(seed, Domain::SignalNoise, id);
        b[0] = F::zero();
        for i in 1..n {
            b[i] = b[i - 1] + F::lit(rb.normal()) * (pts[i] - pts[i - 1]).sqrt();
        }
        // V_t = B_T + sum of exact signal increments after t
        v[n - 1] = b[n - 1];
        for i in (0..n - 1).rev() {
            let var = tails[i] - tails[i + 1];
            v[i] = v[i + 1] + F::lit(rw.normal()) * var.max(F::zero()).sqrt();
        }
        let mut drift: Vec<F> = (0..n - 1).map(|i| (v[i] - b[i]) / (horizon + tails[i] - pts[i])).collect();
        drift.push(drift[n - 2]);
        let a = cumulative_trapezoid(pts, &drift);
        for i in 0..n {
            innov[i] = b[i] - a[i];
        }
    });
    let meta = BundleMeta { seed, first_path: range.start, ..Default::default() };
    let [b, v, innovation] = split3(grid, range, rows, meta)?;
    Ok(PeofPaths { b, v, innovation })
}

/// `E[W~_t V_s] = s - int_0^s (T + tail(s) - u) / (T + tail(u) - u) du` for
/// `s <= t`, by Simpson's rule on each schedule piece.
pub fn peof_innovation_signal_moment<F: Real>(schedule: &VarianceSchedule<F>, s: F) -> Result<F> {
    let horizon = schedule.horizon();
    ensure!(s >= F::zero() && s < horizon, "s must lie in [0, {horizon}), got {s}");
    let ts = schedule.tail(s);
    let f = |u: F| (horizon + ts - u) / (horizon + schedule.tail(u) - u);
    let mut cuts: Vec<F> = schedule.breaks().iter().copied().filter(|&b| b > F::zero() && b < s).collect();
    cuts.insert(0, F::zero());
    cuts.push(s);
    let integral = cuts.windows(2).map(|w| simpson(f, w[0], w[1], 512)).fold(F::zero(), |a, b| a + b);
    Ok(s - integral)
}

/// Signal `V` and bridge `B` with `B_T = V_T`.
#[derive(Debug, Clone)]
pub struct ProgPaths<F> {
    pub b: PathBundle<F>,
    pub v: PathBundle<F>,
}

/// `V_t = V_0 + int_0^t sigma dW1` with `V_0 ~ N(0, v0)`, and
/// `dB = dW2 + (V_t - B_t) / (v(t) - t) dt` from `B_0 = 0`, integrated up to
/// the last node before `T`; the node at `T` holds that value.
///
/// [`BridgeScheme::DriftImplicit`] evaluates the mean-reverting drift at the
/// new node, which keeps the step stable however small `v(t) - t` gets.
pub fn prog_bridge_simulate<F: Real>(
    schedule: &VarianceSchedule<F>,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
    scheme: BridgeScheme,
) -> Result<ProgPaths<F>> {
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    schedule.check_bridge(grid)?;
    let horizon = schedule.horizon();
    let pts = grid.points();
    let n = pts.len();
    let vs: Vec<F> = pts.iter().map(|&t| schedule.v(t)).collect();
    let sd0 = schedule.v0().sqrt();
    let (rows, _) = par_fill_rows(range, 2 * n, |id, row: &mut [F]| {
        let (b, v) = row.split_at_mut(n);
        let mut r0 = PathRng::new(seed, Domain::SignalStart, id);
        let mut r1 = PathRng::new(seed, Domain::SignalNoise, id);
        let mut r2 = PathRng::new(seed, Domain::Euler, id);
        v[0] = F::lit(r0.normal()) * sd0;
        for i in 1..n {
            v[i] = v[i - 1] + F::lit(r1.normal()) * (vs[i] - vs[i - 1]).max(F::zero()).sqrt();
        }
        b[0] = F::zero();
        let mut filled = 0;
        while filled + 1 < n && pts[filled + 1] < horizon {
            let (i, j) = (filled, filled + 1);
            let h = pts[j] - pts[i];
            let dw = F::lit(r2.normal()) * h.sqrt();
            b[j] = match scheme {
                BridgeScheme::Explicit => b[i] + (v[i] - b[i]) / (vs[i] - pts[i]) * h + dw,
                BridgeScheme::DriftImplicit => {
                    let k = h / (vs[j] - pts[j]);
                    (b[i] + dw + k * v[j]) / (F::one() + k)
                }
            };
            filled = j;
        }
        let held = b[filled];
        b[filled + 1..].iter_mut().for_each(|x| *x = held);
    });
    let meta = BundleMeta { seed, first_path: range.start, ..Default::default() };
    let w = n;
    let (mut bv, mut vv) = (Vec::with_capacity(range.count * w), Vec::with_capacity(range.count * w));
    for row in rows.chunks_exact(2 * w) {
        bv.extend_from_slice(&row[..w]);
        vv.extend_from_slice(&row[w..]);
    }
    Ok(ProgPaths {
        b: PathBundle::new(grid.clone(), bv, AuxTable::empty(), meta.clone())?,
        v: PathBundle::new(grid.clone(), vv, AuxTable::empty(), meta)?,
    })
}

/// Index of the last node strictly before the horizon.
pub fn last_live_node<F: Real>(grid: &TimeGrid<F>) -> usize {
    grid.last_index_before(grid.horizon())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, Refinement};
    use approx::assert_abs_diff_eq;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn schedule_accounting() {
        let s = VarianceSchedule::two_level(1.0f64, 0.5, 1.0, 0.5, 0.2).unwrap();
        assert_abs_diff_eq!(s.total(), 0.5 + 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(s.v(0.75), 0.2 + 0.5 + 0.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(s.tail(0.25), 0.25 + 0.125, epsilon = 1e-15);
        assert_eq!(s.sigma(0.5), 0.5);
        assert_eq!(s.sigma(1.0), 0.5);
        let b = VarianceSchedule::bridge(vec![0.0, 0.5, 1.0], vec![0.8, 0.4]).unwrap();
        assert_abs_diff_eq!(b.v(1.0), 1.0, epsilon = 1e-15);
        assert!(VarianceSchedule::bridge(vec![0.0, 1.0], vec![2.0]).is_err());
        assert!(VarianceSchedule::new(vec![0.0, 1.0], vec![-1.0], 0.0).is_err());
    }

    #[test]
    fn noisy_drift_examples() {
        assert_eq!(noisy_drift(0.3, 0.7, 0.7, 1.0, 0.2).unwrap(), 0.0);
        assert_eq!(noisy_drift(0.0, 1.0, 0.0, 1.0, 0.0).unwrap(), 1.0);
        assert!(noisy_drift(1.0, 1.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn moment_reference_value() {
        // sigma^2 = 1 on [0, .5), .25 on [.5, 1]; hand value from the integral
        // int_0^.5 (1.125 - u) / (1.125 + .5 - 2u) du, evaluated in closed form:
        // (1.125 - u)/(1.625 - 2u) = 1/2 + .3125/(1.625 - 2u)
        let s = VarianceSchedule::two_level(1.0f64, 0.5, 1.0, 0.5, 0.0).unwrap();
        let by_hand = 0.5 - (0.25 + 0.3125 / 2.0 * (1.625f64 / 0.625).ln());
        assert_abs_diff_eq!(peof_innovation_signal_moment(&s, 0.5).unwrap(), by_hand, epsilon = 1e-10);
        assert!(by_hand > 0.0);
        assert_abs_diff_eq!(peof_innovation_signal_moment(&s, 0.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn peof_moments() {
        let s = VarianceSchedule::two_level(1.0f64, 0.5, 1.0, 0.5, 0.0).unwrap();
        let g = make_grid(1.0, 512, Refinement::Uniform).unwrap();
        let p = simulate_peof(&s, &g, 40_000, 3).unwrap();
        let (is, it) = (g.index_of(0.5).unwrap(), g.index_of(0.75).unwrap());
        let w = &p.innovation;
        let prod: Vec<f64> = w.paths().map(|p| p.values[is] * p.values[it]).collect();
        let (m, se) = mean_and_se(&prod);
        assert!((m - 0.5).abs() < 4.0 * se, "cov {m} +- {se}");
        let cross: Vec<f64> = w.paths().zip(p.v.paths()).map(|(w, v)| w.values[it] * v.values[is]).collect();
        let (m, se) = mean_and_se(&cross);
        let target = peof_innovation_signal_moment(&s, 0.5).unwrap();
        assert!((m - target).abs() < 4.0 * se, "cross {m} +- {se} vs {target}");
        // V_0 = B_T + int_0^T sigma dW has variance T + total
        let v0: Vec<f64> = p.v.column(0).iter().map(|x| x * x).collect();
        let (m, se) = mean_and_se(&v0);
        assert!((m - (1.0 + s.total())).abs() < 4.0 * se);
    }

    #[test]
    fn peof_without_noise_is_the_brownian_bridge_innovation() {
        let s = VarianceSchedule::constant(1.0f64, 0.0, 0.0).unwrap();
        let g = make_grid(1.0, 256, Refinement::Uniform).unwrap();
        let p = simulate_peof(&s, &g, 8, 1).unwrap();
        for (b, v) in p.b.paths().zip(p.v.paths()) {
            assert!(v.values.iter().all(|&x| x == b.last()));
        }
        let d: f64 = noisy_drift(0.25, 1.0, 0.5, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(d, crate::initial_enlargement::bb_drift(0.25, 0.5, 1.0, 1.0).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn prog_bridge_moments_and_pinning() {
        let s = VarianceSchedule::bridge(vec![0.0, 0.5, 1.0], vec![0.8, 0.4]).unwrap();
        let checkpoints = [0.25, 0.5, 0.75];
        let g = make_grid(1.0f64, 4096, Refinement::graded_for(4096)).unwrap().merged(&checkpoints);
        let n = 20_000;
        let p = prog_bridge_simulate(&s, &g, n, 9, BridgeScheme::DriftImplicit).unwrap();
        for t in checkpoints {
            let i = g.index_of(t).unwrap();
            let gap: Vec<f64> = p.b.paths().zip(p.v.paths()).map(|(b, v)| (b.values[i] - v.values[i]).powi(2)).collect();
            let (m, se) = mean_and_se(&gap);
            assert!((m - (s.v(t) - t)).abs() < 4.0 * se, "t={t}: {m} vs {}", s.v(t) - t);
            let bv: Vec<f64> = p.b.paths().zip(p.v.paths()).map(|(b, v)| b.values[i] * v.values[i]).collect();
            let (m, se) = mean_and_se(&bv);
            assert!((m - t).abs() < 4.0 * se, "E[B V] at {t}: {m}");
        }
        let (i, j) = (g.index_of(0.25).unwrap(), g.index_of(0.75).unwrap());
        let bb: Vec<f64> = p.b.paths().map(|b| b.values[i] * b.values[j]).collect();
        let (m, se) = mean_and_se(&bb);
        assert!((m - 0.25).abs() < 4.0 * se);
        let last = last_live_node(&g);
        let rms = |p: &ProgPaths<f64>, last: usize| {
            let ss: f64 = p.b.paths().zip(p.v.paths()).map(|(b, v)| (b.values[last] - v.values[last]).powi(2)).sum();
            (ss / p.b.n_paths() as f64).sqrt()
        };
        let coarse = rms(&p, last);
        assert!(coarse <= 0.05, "rms {coarse}");
        let fine_grid = make_grid(1.0f64, 4 * 4096, Refinement::graded_for(4 * 4096)).unwrap();
        let fine = prog_bridge_simulate(&s, &fine_grid, 2_000, 9, BridgeScheme::DriftImplicit).unwrap();
        let fine_rms = rms(&fine, last_live_node(&fine_grid));
        assert!(fine_rms <= 0.6 * coarse, "{fine_rms} vs {coarse}");
    }

    #[test]
    fn prog_rejects_broken_schedules() {
        let s = VarianceSchedule::constant(1.0f64, 0.5, 0.0).unwrap();
        let g = make_grid(1.0, 16, Refinement::Uniform).unwrap();
        let err = prog_bridge_simulate(&s, &g, 4, 1, BridgeScheme::DriftImplicit).unwrap_err();
        assert!(err.to_string().contains("v(T) = T"), "{err}");
        // all signal variance arrives after .5, so v(t) = 0 <= t before
        let s = VarianceSchedule::bridge(vec![0.0, 0.5, 1.0], vec![0.0, 2.0f64.sqrt()]).unwrap();
        let err = prog_bridge_simulate(&s, &g, 4, 1, BridgeScheme::DriftImplicit).unwrap_err();
        assert!(err.to_string().contains("node 0"), "{err}");
    }
}

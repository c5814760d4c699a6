use rand_distr::{Distribution, Poisson};

use crate::error::{ensure, Result};
use crate::paths::{par_fill_rows, par_map_paths, AuxTable, BundleMeta, PathBundle, PathRange, TimeGrid};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;

/// Standard Brownian motion sampled exactly at the grid points.
pub fn simulate_brownian<F: Real>(grid: &TimeGrid<F>, paths: impl Into<PathRange>, seed: u64) -> Result<PathBundle<F>> {
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let pts = grid.points();
    let (values, _) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| {
        let mut rng = PathRng::new(seed, Domain::Brownian, id);
        let mut b = F::zero();
        row[0] = b;
        for (i, w) in pts.windows(2).enumerate() {
            b += (w[1] - w[0]).sqrt() * F::lit(rng.normal());
            row[i + 1] = b;
        }
    });
    PathBundle::new(grid.clone(), values, AuxTable::empty(), BundleMeta { seed, first_path: range.start, ..Default::default() })
}

/// Arrival epochs of a rate-`rate` Poisson process: all arrivals in `(0, horizon]`
/// plus, if `nth` is given, arrivals continue until the `nth` one is known.
fn poisson_arrivals<F: Real>(rng: &mut PathRng, rate: F, horizon: F, nth: Option<usize>) -> (Vec<F>, Option<F>) {
    let mut jumps = Vec::new();
    let mut t = F::zero();
    let mut count = 0usize;
    let mut nth_time = None;
    loop {
        t += F::lit(rng.exp1()) / rate;
        count += 1;
        if Some(count) == nth {
            nth_time = Some(t);
        }
        if t <= horizon {
            jumps.push(t);
        }
        let need_more = t <= horizon || nth.is_some_and(|n| count < n);
        if !need_more {
            break;
        }
    }
    (jumps, nth_time)
}

fn counts_on_grid<F: Real>(jumps: &[F], pts: &[F], row: &mut [F]) {
    let mut k = 0usize;
    for (slot, &t) in row.iter_mut().zip(pts) {
        while k < jumps.len() && jumps[k] <= t {
            k += 1;
        }
        *slot = F::from_count(k);
    }
}

fn poisson_bundle<F: Real>(
    rate: F,
    grid: &TimeGrid<F>,
    range: PathRange,
    seed: u64,
    nth: Option<usize>,
) -> Result<PathBundle<F>> {
    ensure!(rate > F::zero() && rate.is_finite(), "rate must be positive, got {rate}");
    ensure!(range.count >= 1, "n_paths must be at least 1");
    ensure!(nth.is_none_or(|n| n >= 1), "jump index must be at least 1");
    let horizon = grid.horizon();
    let pts = grid.points();
    let (values, extras) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| {
        let mut rng = PathRng::new(seed, Domain::Poisson, id);
        let (jumps, nth_time) = poisson_arrivals(&mut rng, rate, horizon, nth);
        counts_on_grid(&jumps, pts, row);
        (jumps, nth_time)
    });
    let n_terminal: Vec<F> = extras.iter().map(|(j, _)| F::from_count(j.len())).collect();
    let mut aux = AuxTable::single("N_T", n_terminal);
    if nth.is_some() {
        aux.insert("T_n", extras.iter().map(|(_, t)| t.expect("nth arrival simulated")).collect());
    }
    let jumps = extras.into_iter().map(|(j, _)| j).collect();
    PathBundle::new(grid.clone(), values, aux, BundleMeta { seed, first_path: range.start, ..Default::default() })?
        .with_jumps(jumps, None)
}

/// Poisson counting paths built from exact exponential inter-arrival gaps.
///
/// Values are counts at the grid points, `jump_times` the exact epochs in
/// `(0, T]`, and aux `N_T` the terminal count.
pub fn simulate_poisson<F: Real>(
    rate: F,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PathBundle<F>> {
    poisson_bundle(rate, grid, paths.into(), seed, None)
}

/// As [`simulate_poisson`], additionally recording the `n`-th arrival epoch
/// (aux `T_n`), which may lie beyond the horizon.
///
/// The arrivals inside `[0, T]` coincide with those of [`simulate_poisson`]
/// for the same seed.
pub fn simulate_poisson_with_nth<F: Real>(
    rate: F,
    grid: &TimeGrid<F>,
    n: usize,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PathBundle<F>> {
    poisson_bundle(rate, grid, paths.into(), seed, Some(n))
}

/// Poisson paths drawn by first sampling `N_T ~ Poisson(rate T)` and then
/// placing the arrivals as sorted uniforms on `(0, T]`.
///
/// An independent construction of the same law, used to cross-check the
/// exponential-gap simulator.
pub fn simulate_poisson_order_statistics<F: Real>(
    rate: F,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PathBundle<F>> {
    let range = paths.into();
    ensure!(rate > F::zero() && rate.is_finite(), "rate must be positive, got {rate}");
    let horizon = grid.horizon();
    let law = Poisson::new((rate * horizon).as_f64()).map_err(|e| crate::error::invalid(e.to_string()))?;
    let pts = grid.points();
    let (values, jumps) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| {
        let mut rng = PathRng::new(seed, Domain::Poisson, id);
        let n = law.sample(&mut rng) as usize;
        let mut jumps: Vec<F> = (0..n).map(|_| horizon * F::lit(rng.uniform())).collect();
        jumps.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        jumps.dedup();
        counts_on_grid(&jumps, pts, row);
        jumps
    });
    let aux = AuxTable::single("N_T", jumps.iter().map(|j| F::from_count(j.len())).collect());
    PathBundle::new(grid.clone(), values, aux, BundleMeta { seed, first_path: range.start, ..Default::default() })?
        .with_jumps(jumps, None)
}

/// `n`-th arrival epoch of a rate-`rate` Poisson process on path `id`.
pub fn poisson_nth_arrival<F: Real>(rate: F, n: usize, seed: u64, id: u64) -> F {
    let mut rng = PathRng::new(seed, Domain::Poisson, id);
    (0..n).map(|_| F::lit(rng.exp1()) / rate).fold(F::zero(), |a, b| a + b)
}

/// First hitting time of level -1 by standard Brownian motion for path `id`,
/// via `tau = 1 / Z^2` with `Z` standard normal.
pub fn hitting_time_unit<F: Real>(seed: u64, id: u64) -> F {
    let mut rng = PathRng::new(seed, Domain::HittingTime, id);
    let z = rng.normal();
    F::lit(1.0 / (z * z))
}

/// `n` independent copies of [`hitting_time_unit`].
pub fn sample_hitting_time_unit<F: Real>(paths: impl Into<PathRange>, seed: u64) -> Result<Vec<F>> {
    let range = paths.into();
    ensure!(range.count >= 1, "n must be at least 1");
    Ok(par_map_paths(range, |id| hitting_time_unit(seed, id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, Refinement};
    use crate::special::normal_cdf;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn brownian_terminal_moments() {
        let g = make_grid(1.0, 8, Refinement::Uniform).unwrap();
        let b = simulate_brownian(&g, 100_000, 11).unwrap();
        let (m, v) = mean_var(&b.terminal());
        assert!(m.abs() <= 4.0 / (1e5f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() <= 0.05, "variance {v}");
        assert!(b.column(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn brownian_is_deterministic_and_chunk_invariant() {
        let g = make_grid(1.0, 16, Refinement::Uniform).unwrap();
        let a = simulate_brownian::<f64>(&g, 1, 5).unwrap();
        let b = simulate_brownian::<f64>(&g, 1, 5).unwrap();
        assert_eq!(a.values(), b.values());

        let whole = simulate_brownian::<f64>(&g, 10, 5).unwrap();
        let mut stitched = Vec::new();
        for part in PathRange::from(10).chunks(3) {
            stitched.extend_from_slice(simulate_brownian::<f64>(&g, part, 5).unwrap().values());
        }
        assert_eq!(whole.values(), stitched.as_slice());
    }

    #[test]
    fn brownian_in_single_precision() {
        let g = make_grid(1.0f32, 4, Refinement::Uniform).unwrap();
        let b = simulate_brownian(&g, 20_000, 3).unwrap();
        let t: Vec<f64> = b.terminal().iter().map(|&x| x as f64).collect();
        let (_, v) = mean_var(&t);
        assert!((v - 1.0).abs() < 0.05);
    }

    #[test]
    fn poisson_counts() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let p = simulate_poisson(1.0, &g, 100_000, 3).unwrap();
        let nt = p.aux_column("N_T").unwrap();
        let (m, v) = mean_var(&nt);
        assert!((m - 1.0).abs() <= 4.0 / (1e5f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() <= 0.03, "variance {v}");
        assert_eq!(p.terminal(), nt);

        let p2 = simulate_poisson(2.0, &g, 100_000, 4).unwrap();
        let zero = p2.aux_column("N_T").unwrap().iter().filter(|&&k| k == 0.0).count() as f64 / 1e5;
        let p0 = (-2.0f64).exp();
        assert!((zero - p0).abs() <= 4.0 * (p0 * (1.0 - p0) / 1e5).sqrt(), "P(N=0) {zero}");
    }

    #[test]
    fn poisson_path_without_jumps_is_flat() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let p = simulate_poisson(0.05, &g, 200, 9).unwrap();
        let quiet = p.paths().find(|v| v.jump_times.unwrap().is_empty()).expect("some path has no jumps");
        assert!(quiet.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nth_arrival_extends_beyond_horizon_without_changing_path() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let plain = simulate_poisson(1.0, &g, 500, 21).unwrap();
        let with = simulate_poisson_with_nth(1.0, &g, 3, 500, 21).unwrap();
        assert_eq!(plain.values(), with.values());
        let tn = with.aux_column("T_n").unwrap();
        assert!(tn.iter().any(|&t| t > 1.0));
        for (i, p) in with.paths().enumerate() {
            let jumps = p.jump_times.unwrap();
            if jumps.len() >= 3 {
                assert_eq!(jumps[2], tn[i]);
            } else {
                assert!(tn[i] > 1.0);
            }
            assert_eq!(poisson_nth_arrival::<f64>(1.0, 3, 21, i as u64), tn[i]);
        }
    }

    #[test]
    fn order_statistics_construction_matches_law() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let p = simulate_poisson_order_statistics(2.0, &g, 50_000, 8).unwrap();
        let (m, _) = mean_var(&p.aux_column("N_T").unwrap());
        assert!((m - 2.0).abs() < 4.0 * (2.0f64 / 5e4).sqrt());
        // N_{1/2} has mean 1
        let (mh, _) = mean_var(&p.column(2));
        assert!((mh - 1.0).abs() < 4.0 * (1.0f64 / 5e4).sqrt());
    }

    #[test]
    fn hitting_time_cdf_at_one() {
        let s: Vec<f64> = sample_hitting_time_unit(100_000, 17).unwrap();
        let frac = s.iter().filter(|&&t| t <= 1.0).count() as f64 / 1e5;
        let target = 2.0 * normal_cdf(-1.0f64);
        assert!((target - 0.3173).abs() < 1e-4);
        assert!((frac - target).abs() < 1.63 / (1e5f64).sqrt());
        assert!(s.iter().all(|&t| t > 0.0));
        assert!(sample_hitting_time_unit::<f64>(0, 1).is_err());
    }

    #[test]
    fn rejects_bad_rate() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        assert!(simulate_poisson(0.0, &g, 10, 1).is_err());
        assert!(simulate_poisson(-1.0, &g, 10, 1).is_err());
    }
}

use crate::error::{ensure, Error, Result};
use crate::paths::{par_fill_rows, AuxTable, BundleMeta, PathBundle, PathRange, TimeGrid};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;

/// Default bound on the drift magnitude used in one Euler step.
pub const DEFAULT_DRIFT_CLIP: f64 = 1.0e4;

/// Options of the Euler-Maruyama engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeOptions<F> {
    pub x0: F,
    pub drift_clip: F,
    /// Integration stops at the last node strictly before this time; later
    /// nodes hold that value.
    pub singular_time: Option<F>,
    /// Absorbing level: once the state falls to or below it, it stays there.
    pub absorb_at: Option<F>,
}

impl<F: Real> Default for SdeOptions<F> {
    fn default() -> Self {
        Self { x0: F::zero(), drift_clip: F::lit(DEFAULT_DRIFT_CLIP), singular_time: None, absorb_at: None }
    }
}

#[derive(Default)]
struct PathStats {
    clips: u64,
    absorbed: bool,
}

/// Explicit Euler-Maruyama for `dX = a(t, X, aux) dt + b(t, X) dW`.
///
/// `aux` holds one row per path (or is empty); the drift receives the row of
/// the path being integrated. Drift magnitudes above `drift_clip` are clamped
/// and counted in `meta.clip_events`.
pub fn simulate_sde_euler<F, D, S>(
    drift: D,
    diffusion: S,
    grid: &TimeGrid<F>,
    aux: AuxTable<F>,
    paths: impl Into<PathRange>,
    seed: u64,
    opts: SdeOptions<F>,
) -> Result<PathBundle<F>>
where
    F: Real,
    D: Fn(F, F, &[F]) -> F + Sync,
    S: Fn(F, F) -> F + Sync,
{
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    ensure!(opts.drift_clip > F::zero(), "drift_clip must be positive, got {}", opts.drift_clip);
    ensure!(
        aux.width() == 0 || aux.n_rows() == range.count,
        "aux table has {} rows for {} paths",
        aux.n_rows(),
        range.count
    );
    let pts = grid.points();
    let stop = match opts.singular_time {
        Some(ts) => {
            ensure!(ts > F::zero(), "singular time must be positive");
            grid.last_index_before(ts).min(grid.n_steps())
        }
        None => grid.n_steps(),
    };
    let empty: &[F] = &[];
    let (values, stats) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| -> Result<PathStats> {
        let local = (id - range.start) as usize;
        let aux_row = if aux.width() == 0 { empty } else { aux.row(local) };
        let mut rng = PathRng::new(seed, Domain::Euler, id);
        let mut stats = PathStats::default();
        let mut x = opts.x0;
        row[0] = x;
        let mut filled = 0;
        for i in 0..stop {
            let t = pts[i];
            let h = pts[i + 1] - t;
            let noise = F::lit(rng.normal());
            let mut a = drift(t, x, aux_row);
            let b = diffusion(t, x);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NumericFailure {
                    path: id,
                    node: i,
                    detail: format!("drift {a}, diffusion {b} at t={t}, x={x}"),
                });
            }
            if a.abs() > opts.drift_clip {
                a = opts.drift_clip.copysign(a);
                stats.clips += 1;
            }
            x += a * h + b * h.sqrt() * noise;
            filled = i + 1;
            if let Some(level) = opts.absorb_at {
                if x <= level {
                    x = level;
                    row[filled] = x;
                    stats.absorbed = filled < stop;
                    break;
                }
            }
            row[filled] = x;
        }
        let held = row[filled];
        row[filled + 1..].iter_mut().for_each(|v| *v = held);
        Ok(stats)
    });
    let mut meta = BundleMeta { seed, first_path: range.start, ..Default::default() };
    for s in stats {
        let s = s?;
        meta.clip_events += s.clips;
        meta.absorbed_paths += u64::from(s.absorbed);
    }
    PathBundle::new(grid.clone(), values, aux, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, simulate_brownian, Refinement};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_drift_unit_diffusion_has_brownian_covariance() {
        let g = make_grid(1.0, 64, Refinement::Uniform).unwrap();
        let b = simulate_sde_euler(|_, _, _| 0.0, |_, _| 1.0, &g, AuxTable::empty(), 50_000, 2, SdeOptions::default()).unwrap();
        let (i, j) = (16, 48);
        let (xs, ys) = (b.column(i), b.column(j));
        let n = xs.len() as f64;
        let prods: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * y).collect();
        let m = prods.iter().sum::<f64>() / n;
        let sd = (prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((m - 0.25).abs() <= 4.0 * sd / n.sqrt(), "cov {m}");
        // same law as the exact sampler
        let exact = simulate_brownian(&g, 50_000, 2).unwrap();
        let v_exact = exact.terminal().iter().map(|x| x * x).sum::<f64>() / n;
        let v_euler = b.terminal().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((v_exact - v_euler).abs() < 0.05);
    }

    #[test]
    fn deterministic_ode() {
        let g = make_grid(2.0, 100, Refinement::Geometric { ratio: 0.97 }).unwrap();
        let b = simulate_sde_euler(|_, _, _| 0.7, |_, _| 0.0, &g, AuxTable::empty(), 3, 1, SdeOptions::default()).unwrap();
        for x in b.terminal() {
            assert_abs_diff_eq!(x, 1.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn clipping_is_counted() {
        let g = make_grid(1.0, 10, Refinement::Uniform).unwrap();
        let opts = SdeOptions { drift_clip: 5.0, ..Default::default() };
        let b = simulate_sde_euler(|_, _, _| 100.0, |_, _| 0.0, &g, AuxTable::empty(), 2, 1, opts).unwrap();
        assert_eq!(b.meta.clip_events, 20);
        assert_abs_diff_eq!(b.terminal()[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_drift_reports_node() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let err = simulate_sde_euler(
            |t: f64, _, _| if t >= 0.5 { f64::NAN } else { 0.0 },
            |_, _| 1.0,
            &g,
            AuxTable::empty(),
            2,
            1,
            SdeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NumericFailure { path: 0, node: 2, .. }), "{err:?}");
    }

    #[test]
    fn stops_before_singularity_and_absorbs() {
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        let opts = SdeOptions { singular_time: Some(1.0), ..Default::default() };
        let b = simulate_sde_euler(|_, _, _| 1.0, |_, _| 0.0, &g, AuxTable::empty(), 1, 1, opts).unwrap();
        assert_eq!(b.path(0).values, &[0.0, 0.25, 0.5, 0.75, 0.75]);

        let opts = SdeOptions { absorb_at: Some(-0.3), ..Default::default() };
        let b = simulate_sde_euler(|_, _, _| -1.0, |_, _| 0.0, &g, AuxTable::empty(), 1, 1, opts).unwrap();
        assert_eq!(b.path(0).values, &[0.0, -0.25, -0.3, -0.3, -0.3]);
        assert_eq!(b.meta.absorbed_paths, 1);
    }

    #[test]
    fn drift_sees_its_aux_row() {
        let g = make_grid(1.0, 2, Refinement::Uniform).unwrap();
        let aux = AuxTable::single("x", vec![1.0, -2.0]);
        let b = simulate_sde_euler(|_, _, a: &[f64]| a[0], |_, _| 0.0, &g, aux, 2, 1, SdeOptions::default()).unwrap();
        assert_eq!(b.terminal(), vec![1.0, -2.0]);
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{PathBundle, PathView, TimeGrid};
use crate::scalar::Real;

use super::moments::{node_pairs, Moments};
use super::{ReportContext, TestReport};

/// Bounded functional of the path up to `s`, evaluated on the state `X_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZFunctional {
    Zero,
    One,
    Sin,
    AboveMedian,
}

/// Function of the revealed variable `L`. `Identity` is unbounded and meant
/// for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GFunctional {
    One,
    Cos,
    AboveMedian,
    Identity,
}

impl ZFunctional {
    fn eval(self, x: f64, median: f64) -> f64 {
        match self {
            ZFunctional::Zero => 0.0,
            ZFunctional::One => 1.0,
            ZFunctional::Sin => x.sin(),
            ZFunctional::AboveMedian => f64::from(u8::from(x > median)),
        }
    }

    fn label(self) -> &'static str {
        match self {
            ZFunctional::Zero => "0",
            ZFunctional::One => "1",
            ZFunctional::Sin => "sin",
            ZFunctional::AboveMedian => "above-median",
        }
    }
}

impl GFunctional {
    fn eval(self, l: f64, median: f64) -> f64 {
        match self {
            GFunctional::One => 1.0,
            GFunctional::Cos => l.cos(),
            GFunctional::AboveMedian => f64::from(u8::from(l > median)),
            GFunctional::Identity => l,
        }
    }

    fn label(self) -> &'static str {
        match self {
            GFunctional::One => "1",
            GFunctional::Cos => "cos",
            GFunctional::AboveMedian => "above-median",
            GFunctional::Identity => "L",
        }
    }
}

/// Compensator that is identically zero.
pub fn no_compensator<F: Real>(path: &PathView<'_, F>) -> Vec<F> {
    vec![F::zero(); path.values.len()]
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Streaming estimate of `E[Z g(L) (X_t - X_s)]` with `X = M - A` for every
/// pair and every `(Z, g)` combination; the expectation is 0 when `A` is the
/// compensator of `M` in the enlarged filtration.
///
/// Median thresholds are fixed by [`MartingaleTest::calibrate`] (a pilot
/// batch) and stay frozen for all later batches.
#[derive(Debug, Clone)]
pub struct MartingaleTest {
    name: String,
    times: Vec<(f64, f64)>,
    z_family: Vec<ZFunctional>,
    g_family: Vec<GFunctional>,
    threshold: f64,
    z_medians: Vec<f64>,
    g_median: f64,
    calibrated: bool,
    acc: Vec<Moments>,
}

impl MartingaleTest {
    pub fn new<F: Real>(
        name: impl Into<String>,
        grid: &TimeGrid<F>,
        pairs: &[(F, F)],
        z_family: &[ZFunctional],
        g_family: &[GFunctional],
        threshold: f64,
    ) -> Result<Self> {
        ensure!(!pairs.is_empty(), "at least one (s, t) pair is required");
        ensure!(!z_family.is_empty() && !g_family.is_empty(), "Z and g families must be non-empty");
        ensure!(threshold > 0.0, "threshold must be positive, got {threshold}");
        for &(s, t) in pairs {
            ensure!(s < t, "need s < t, got ({s}, {t})");
        }
        node_pairs(grid, pairs)?;
        let combos = pairs.len() * z_family.len() * g_family.len();
        Ok(Self {
            name: name.into(),
            times: pairs.iter().map(|&(s, t)| (s.as_f64(), t.as_f64())).collect(),
            z_family: z_family.to_vec(),
            g_family: g_family.to_vec(),
            threshold,
            z_medians: vec![0.0; pairs.len()],
            g_median: 0.0,
            calibrated: false,
            acc: vec![Moments::default(); combos],
        })
    }

    fn pairs<F: Real>(&self) -> Vec<(F, F)> {
        self.times.iter().map(|&(s, t)| (F::lit(s), F::lit(t))).collect()
    }

    /// Freezes the median thresholds from a pilot bundle. Called
    /// automatically on the first accumulated bundle otherwise.
    pub fn calibrate<F: Real>(&mut self, bundle: &PathBundle<F>, revealed: &[F]) -> Result<()> {
        let nodes = node_pairs(bundle.grid(), &self.pairs::<F>())?;
        self.z_medians = nodes.iter().map(|&(i, _)| median(bundle.column(i).iter().map(|x| x.as_f64()).collect())).collect();
        self.g_median = median(revealed.iter().map(|x| x.as_f64()).collect());
        self.calibrated = true;
        Ok(())
    }

    pub fn medians(&self) -> (&[f64], f64) {
        (&self.z_medians, self.g_median)
    }

    /// Adds every path of `bundle`. `compensator` returns the cumulative
    /// compensator at all grid nodes of a path; `revealed[i]` is `L` of path `i`.
    pub fn accumulate<F, C>(&mut self, bundle: &PathBundle<F>, compensator: C, revealed: &[F]) -> Result<()>
    where
        F: Real,
        C: Fn(&PathView<'_, F>) -> Vec<F> + Sync,
    {
        ensure!(
            revealed.len() == bundle.n_paths(),
            "{} revealed values for {} paths",
            revealed.len(),
            bundle.n_paths()
        );
        if !self.calibrated {
            self.calibrate(bundle, revealed)?;
        }
        let nodes = node_pairs(bundle.grid(), &self.pairs::<F>())?;
        let (zf, gf) = (&self.z_family, &self.g_family);
        let (zm, gm) = (&self.z_medians, self.g_median);
        let rows: Vec<Vec<f64>> = (0..bundle.n_paths())
            .into_par_iter()
            .map(|k| {
                let p = bundle.path(k);
                let a = compensator(&p);
                let l = revealed[k].as_f64();
                let mut row = Vec::with_capacity(nodes.len() * zf.len() * gf.len());
                for (pi, &(i, j)) in nodes.iter().enumerate() {
                    let inc = (p.values[j] - p.values[i] - (a[j] - a[i])).as_f64();
                    let xs = p.values[i].as_f64();
                    for z in zf {
                        let zv = z.eval(xs, zm[pi]);
                        for g in gf {
                            row.push(zv * g.eval(l, gm) * inc);
                        }
                    }
                }
                row
            })
            .collect();
        for row in rows {
            for (acc, x) in self.acc.iter_mut().zip(row) {
                acc.push(x);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MartingaleTest) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            a.merge(b);
        }
    }

    /// One report per `(pair, Z, g)`, in that nesting order.
    pub fn reports(&self, ctx: &ReportContext) -> Vec<TestReport> {
        let mut out = Vec::with_capacity(self.acc.len());
        let mut k = 0;
        for &(s, t) in &self.times {
            for z in &self.z_family {
                for g in &self.g_family {
                    let m = &self.acc[k];
                    k += 1;
                    let name = format!("{} increment(s={s}, t={t}, Z={}, g={})", self.name, z.label(), g.label());
                    out.push(TestReport::two_sided(name, m.mean, 0.0, m.stderr(), self.threshold, m.n, ctx));
                }
            }
        }
        out
    }
}

/// Single-bundle form of [`MartingaleTest`], with `L` taken from aux
/// `revealed` and medians calibrated on the bundle itself.
pub fn martingale_increment_test<F, C>(
    bundle: &PathBundle<F>,
    compensator: C,
    revealed: &str,
    pairs: &[(F, F)],
    z_family: &[ZFunctional],
    g_family: &[GFunctional],
    threshold: f64,
) -> Result<Vec<TestReport>>
where
    F: Real,
    C: Fn(&PathView<'_, F>) -> Vec<F> + Sync,
{
    let l = bundle.aux_column(revealed)?;
    let mut test = MartingaleTest::new("martingale", bundle.grid(), pairs, z_family, g_family, threshold)?;
    test.accumulate(bundle, compensator, &l)?;
    Ok(test.reports(&ReportContext::new(bundle.meta.seed, bundle.grid().summary())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial_enlargement::bridge_compensator;
    use crate::paths::{make_grid, simulate_brownian, PathRange, Refinement};

    const ZS: [ZFunctional; 3] = [ZFunctional::One, ZFunctional::Sin, ZFunctional::AboveMedian];
    const GS: [GFunctional; 3] = [GFunctional::One, GFunctional::Cos, GFunctional::AboveMedian];

    fn brownian_with_terminal(n: impl Into<PathRange>, seed: u64) -> PathBundle<f64> {
        let g = make_grid(1.0, 64, Refinement::Uniform).unwrap();
        let mut b = simulate_brownian(&g, n, seed).unwrap();
        let l = b.terminal();
        b.insert_aux("L", l);
        b
    }

    #[test]
    fn compensated_bridge_passes_and_uncompensated_control_fails() {
        let b = brownian_with_terminal(20_000, 4);
        let pairs = [(0.25, 0.75), (0.5, 0.75)];
        let ok = martingale_increment_test(&b, |p| bridge_compensator(p, p.last(), 1.0), "L", &pairs, &ZS, &GS, 4.0).unwrap();
        assert_eq!(ok.len(), 18);
        assert!(ok.iter().all(|r| r.pass), "{:?}", ok.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        let bad = martingale_increment_test(&b, no_compensator, "L", &[(0.25, 0.75)], &[ZFunctional::One], &[GFunctional::Identity], 4.0).unwrap();
        assert!((bad[0].estimate - 0.5).abs() < 0.03, "{}", bad[0].estimate);
        assert!(bad[0].z.abs() > 4.0 && !bad[0].pass);
        let zero = martingale_increment_test(&b, no_compensator, "L", &pairs, &[ZFunctional::Zero], &GS, 4.0).unwrap();
        assert!(zero.iter().all(|r| r.statistic == 0.0 && r.pass));
    }

    #[test]
    fn rejects_off_grid_pairs() {
        let b = brownian_with_terminal(10, 1);
        let err = martingale_increment_test(&b, no_compensator, "L", &[(0.3, 0.75)], &ZS, &GS, 4.0).unwrap_err();
        assert!(err.to_string().contains("not on the grid"));
        assert!(martingale_increment_test(&b, no_compensator, "L", &[(0.75, 0.25)], &ZS, &GS, 4.0).is_err());
        assert!(martingale_increment_test(&b, no_compensator, "nope", &[(0.25, 0.75)], &ZS, &GS, 4.0).is_err());
    }

    #[test]
    fn chunked_accumulation_reproduces_single_pass() {
        let pairs = [(0.25, 0.75)];
        let whole = brownian_with_terminal(3_000, 8);
        let grid = whole.grid().clone();
        let comp = |p: &PathView<'_, f64>| bridge_compensator(p, p.last(), 1.0);
        let mut single = MartingaleTest::new("m", &grid, &pairs, &ZS, &GS, 4.0).unwrap();
        single.accumulate(&whole, comp, &whole.terminal()).unwrap();
        let mut chunked = MartingaleTest::new("m", &grid, &pairs, &ZS, &GS, 4.0).unwrap();
        chunked.calibrate(&whole, &whole.terminal()).unwrap();
        for r in PathRange::new(0, 3_000).chunks(700) {
            let part = brownian_with_terminal(r, 8);
            chunked.accumulate(&part, comp, &part.terminal()).unwrap();
        }
        let ctx = ReportContext::default();
        for (a, b) in single.reports(&ctx).iter().zip(chunked.reports(&ctx)) {
            assert!((a.estimate - b.estimate).abs() < 1e-12 && (a.stderr - b.stderr).abs() < 1e-12);
        }
    }
}

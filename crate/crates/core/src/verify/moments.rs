use crate::error::{ensure, Result};
use crate::paths::{PathBundle, TimeGrid};
use crate::scalar::Real;

use super::{ReportContext, TestReport};

/// Count, mean and centred second moment, mergeable across chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

pub(crate) fn node_pairs<F: Real>(grid: &TimeGrid<F>, pairs: &[(F, F)]) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|&(s, t)| {
            let i = grid.index_of(s);
            let j = grid.index_of(t);
            match (i, j) {
                (Some(i), Some(j)) => Ok((i, j)),
                _ => Err(crate::error::invalid(format!("pair ({s}, {t}) is not on the grid ({})", grid.summary()))),
            }
        })
        .collect()
}

/// Raw sums needed for a sample covariance and the standard error of it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CoMoments {
    n: u64,
    // x, y, xy, x2, y2, x2y, xy2, x2y2
    s: [f64; 8],
}

impl CoMoments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let terms = [x, y, x * y, x * x, y * y, x * x * y, x * y * y, x * x * y * y];
        for (acc, v) in self.s.iter_mut().zip(terms) {
            *acc += v;
        }
    }

    fn merge(&mut self, o: &CoMoments) {
        self.n += o.n;
        for (a, b) in self.s.iter_mut().zip(o.s) {
            *a += b;
        }
    }

    /// Sample covariance and the standard error of it, from the variance
    /// of `(x - mean_x)(y - mean_y)`.
    fn covariance(&self) -> (f64, f64) {
        if self.n < 2 {
            return (0.0, 0.0);
        }
        let n = self.n as f64;
        let e = self.s.map(|v| v / n);
        let [ex, ey, exy, ex2, ey2, ex2y, exy2, ex2y2] = e;
        let (a, b) = (ex, ey);
        let cov = exy - a * b;
        let fourth = ex2y2 - 2.0 * b * ex2y + b * b * ex2 - 2.0 * a * exy2 + 4.0 * a * b * exy - 2.0 * a * b * b * ex
            + a * a * ey2
            - 2.0 * a * a * b * ey
            + a * a * b * b;
        let var = (fourth - cov * cov).max(0.0) * n / (n - 1.0);
        (cov * n / (n - 1.0), (var / n).sqrt())
    }
}

/// Sample covariance of the path values at pairs of grid times against a
/// target, accumulated over any number of bundles.
#[derive(Debug, Clone)]
pub struct CovarianceTest {
    name: String,
    times: Vec<(f64, f64)>,
    targets: Vec<f64>,
    threshold: f64,
    acc: Vec<CoMoments>,
}

impl CovarianceTest {
    pub fn new<F: Real>(name: impl Into<String>, pairs: &[(F, F)], target: impl Fn(F, F) -> F, threshold: f64) -> Self {
        Self {
            name: name.into(),
            times: pairs.iter().map(|&(s, t)| (s.as_f64(), t.as_f64())).collect(),
            targets: pairs.iter().map(|&(s, t)| target(s, t).as_f64()).collect(),
            threshold,
            acc: vec![CoMoments::default(); pairs.len()],
        }
    }

    pub fn accumulate<F: Real>(&mut self, bundle: &PathBundle<F>) -> Result<()> {
        let pairs: Vec<(F, F)> = self.times.iter().map(|&(s, t)| (F::lit(s), F::lit(t))).collect();
        let nodes = node_pairs(bundle.grid(), &pairs)?;
        for p in bundle.paths() {
            for (acc, &(i, j)) in self.acc.iter_mut().zip(&nodes) {
                acc.push(p.values[i].as_f64(), p.values[j].as_f64());
            }
        }
        Ok(())
    }

    /// Adds one path's values at each pair, in pair order.
    pub fn push(&mut self, values: &[(f64, f64)]) {
        for (acc, &(x, y)) in self.acc.iter_mut().zip(values) {
            acc.push(x, y);
        }
    }

    pub fn merge(&mut self, other: &CovarianceTest) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            a.merge(b);
        }
    }

    pub fn reports(&self, ctx: &ReportContext) -> Vec<TestReport> {
        self.times
            .iter()
            .zip(&self.targets)
            .zip(&self.acc)
            .map(|((&(s, t), &target), acc)| {
                let (cov, se) = acc.covariance();
                TestReport::two_sided(format!("{} cov(s={s}, t={t})", self.name), cov, target, se, self.threshold, acc.n, ctx)
            })
            .collect()
    }
}

/// Compares the sample covariance at each `(s, t)` with `target(s, t)`.
pub fn covariance_test<F: Real>(
    bundle: &PathBundle<F>,
    target: impl Fn(F, F) -> F,
    pairs: &[(F, F)],
    threshold: f64,
) -> Result<Vec<TestReport>> {
    let mut test = CovarianceTest::new("covariance", pairs, target, threshold);
    test.accumulate(bundle)?;
    Ok(test.reports(&ReportContext::new(bundle.meta.seed, bundle.grid().summary())))
}

/// Means of per-path quantities against targets, e.g. `E[X_t Y_s]`.
#[derive(Debug, Clone)]
pub struct MeanTest {
    names: Vec<String>,
    targets: Vec<f64>,
    threshold: f64,
    acc: Vec<Moments>,
}

impl MeanTest {
    pub fn new(items: Vec<(String, f64)>, threshold: f64) -> Self {
        let (names, targets): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        let acc = vec![Moments::default(); names.len()];
        Self { names, targets, threshold, acc }
    }

    /// One value per item for a single path.
    pub fn push(&mut self, row: &[f64]) {
        for (acc, &x) in self.acc.iter_mut().zip(row) {
            acc.push(x);
        }
    }

    pub fn merge(&mut self, other: &MeanTest) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            a.merge(b);
        }
    }

    pub fn moments(&self) -> &[Moments] {
        &self.acc
    }

    pub fn reports(&self, ctx: &ReportContext) -> Vec<TestReport> {
        self.names
            .iter()
            .zip(&self.targets)
            .zip(&self.acc)
            .map(|((name, &target), m)| TestReport::two_sided(name.clone(), m.mean, target, m.stderr(), self.threshold, m.n, ctx))
            .collect()
    }
}

/// Root-mean-square of residuals against a bound (one-sided).
#[derive(Debug, Clone, Default)]
pub struct PinningTest {
    squares: Moments,
}

impl PinningTest {
    pub fn push(&mut self, residual: f64) {
        self.squares.push(residual * residual);
    }

    pub fn merge(&mut self, other: &PinningTest) {
        self.squares.merge(&other.squares);
    }

    pub fn rms(&self) -> f64 {
        self.squares.mean.max(0.0).sqrt()
    }

    /// Statistic is the RMS; its standard error follows from the delta method.
    pub fn report(&self, name: impl Into<String>, bound: f64, ctx: &ReportContext) -> TestReport {
        let rms = self.rms();
        let se = if rms > 0.0 { self.squares.stderr() / (2.0 * rms) } else { 0.0 };
        TestReport::one_sided(name, rms, se, bound, self.squares.n, ctx)
    }
}

/// RMS of (final value - aux `target`) against `rms_bound`.
pub fn terminal_pinning_test<F: Real>(bundle: &PathBundle<F>, target: &str, rms_bound: f64) -> Result<TestReport> {
    ensure!(rms_bound > 0.0, "rms bound must be positive, got {rms_bound}");
    let targets = bundle.aux_column(target)?;
    let mut test = PinningTest::default();
    for (p, x) in bundle.paths().zip(targets) {
        test.push((p.last() - x).as_f64());
    }
    let ctx = ReportContext::new(bundle.meta.seed, bundle.grid().summary());
    Ok(test.report(format!("pinning to {target}"), rms_bound, &ctx))
}

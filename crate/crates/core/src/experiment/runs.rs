//! The experiments behind `filtlab run`. Everything here works in `f64`.

use rayon::prelude::*;

use crate::apps::{default_prob_curve, kyle_back_simulate_range, structural_default_nested, JumpSpec, KyleBackConfig, StructuralModel};
use crate::error::{invalid, Error, Result};
use crate::initial_enlargement::{
    bb_density_q, bridge_compensator, default_fd_step, diffusion_info_drift, fill_hitting_bridge, hitting_bridge_grid,
    nth_jump_compensator, ou_kernel, poisson_bridge_compensator, poisson_density_q,
};
use crate::paths::{
    hitting_time_unit, make_grid, par_fill_rows, par_map_paths, sample_hitting_time_unit, simulate_brownian, simulate_levy,
    simulate_poisson, simulate_poisson_with_nth, AuxTable, BundleMeta, JumpLaw, LevyModel, PathBundle, PathRange, PathView,
    Refinement, TimeGrid,
};
use crate::progressive_enlargement::{last_live_node, peof_innovation_signal_moment, prog_bridge_simulate, simulate_peof, VarianceSchedule};
use crate::rng::{Domain, PathRng};
use crate::special::{erlang_survival, gaussian_density, normal_cdf, poisson_pmf, simpson};
use crate::verify::{
    ks_test, no_compensator, CfIdentityTest, CovarianceTest, GFunctional, MartingaleTest, MeanTest, PinningTest, ReportContext,
    TestReport, ZFunctional,
};

use super::config::{ExperimentConfig, RefinementKind};
use super::{ExperimentOutput, Table};

const Z_FAMILY: [ZFunctional; 3] = [ZFunctional::One, ZFunctional::Sin, ZFunctional::AboveMedian];
const G_FAMILY: [GFunctional; 3] = [GFunctional::One, GFunctional::Cos, GFunctional::AboveMedian];

/// Significance level of every KS test.
const KS_LEVEL: f64 = 0.01;
/// Pinning bound on the RMS distance to the target at the last live node.
const PINNING_RMS: f64 = 0.05;
/// Largest tolerated fraction of conditioned paths that touch the barrier early.
const CROSSING_FRACTION: f64 = 0.01;
/// Tolerances of the density normalization checks.
const GAUSSIAN_NORMALIZATION: f64 = 1e-6;
const POISSON_NORMALIZATION: f64 = 1e-12;
/// Barrier shift of discretely monitored Brownian motion, in units of `sigma sqrt(h)`.
const MONITORING_SHIFT: f64 = 0.5826;

/// Paths per batch, sized so one batch holds about 2^21 values.
fn chunk_for(width: usize) -> usize {
    ((1usize << 21) / width.max(1)).clamp(256, 16_384)
}

fn batches(n: usize, width: usize) -> impl Iterator<Item = PathRange> {
    PathRange::new(0, n).chunks(chunk_for(width))
}

/// Accessors for resolved configs; resolution guarantees the fields exist.
struct Params<'a>(&'a ExperimentConfig);

impl Params<'_> {
    fn get<T: Clone>(&self, v: &Option<T>, name: &str) -> Result<T> {
        v.clone().ok_or_else(|| invalid(format!("config field `{name}` missing after resolution")))
    }
    fn seed(&self) -> u64 {
        self.0.seed.unwrap_or(1)
    }
    fn threshold(&self) -> f64 {
        self.0.threshold.unwrap_or(crate::verify::DEFAULT_THRESHOLD)
    }
    fn horizon(&self) -> f64 {
        self.0.horizon.unwrap_or(1.0)
    }
    fn n_paths(&self) -> Result<usize> {
        self.get(&self.0.n_paths, "n_paths")
    }
    fn n_steps(&self) -> Result<usize> {
        self.get(&self.0.n_steps, "n_steps")
    }
    fn pairs(&self) -> Result<Vec<(f64, f64)>> {
        self.get(&self.0.pairs, "pairs")
    }

    fn refinement(&self, n_steps: usize) -> Refinement<f64> {
        match (self.0.refinement.unwrap_or(RefinementKind::Uniform), self.0.ratio) {
            (RefinementKind::Uniform, _) => Refinement::Uniform,
            (RefinementKind::Geometric, Some(ratio)) => Refinement::Geometric { ratio },
            (RefinementKind::Geometric, None) => Refinement::geometric_for(n_steps),
            (RefinementKind::Graded, Some(ratio)) => Refinement::Graded { ratio },
            (RefinementKind::Graded, None) => Refinement::graded_for(n_steps),
        }
    }

    /// Grid on `[0, horizon]` containing every time in `nodes`.
    fn grid(&self, n_steps: usize, nodes: &[f64]) -> Result<TimeGrid<f64>> {
        with_nodes(make_grid(self.horizon(), n_steps, self.refinement(n_steps))?, nodes)
    }
}

fn with_nodes(grid: TimeGrid<f64>, nodes: &[f64]) -> Result<TimeGrid<f64>> {
    Ok(if nodes.iter().all(|&t| grid.index_of(t).is_some()) { grid } else { grid.merged(nodes) })
}

fn node(grid: &TimeGrid<f64>, t: f64) -> Result<usize> {
    grid.index_of(t).ok_or_else(|| invalid(format!("time {t} is not on the grid")))
}

fn pair_times(pairs: &[(f64, f64)]) -> Vec<f64> {
    pairs.iter().flat_map(|&(s, t)| [s, t]).collect()
}

/// Bundle on `grid`, a prefix of `bundle`'s grid, with values `f(t, x)`.
fn prefix_bundle(bundle: &PathBundle<f64>, grid: &TimeGrid<f64>, f: impl Fn(f64, f64) -> Result<f64> + Sync) -> Result<PathBundle<f64>> {
    let (m, w) = (grid.len(), bundle.grid().len());
    let pts = grid.points();
    let rows: Result<Vec<Vec<f64>>> =
        bundle.values().par_chunks(w).map(|row| (0..m).map(|i| f(pts[i], row[i])).collect()).collect();
    PathBundle::new(grid.clone(), rows?.concat(), AuxTable::empty(), bundle.meta.clone())
}

/// `A_t = rate * t`: the compensator of a Poisson count in its own filtration.
fn linear_compensator(rate: f64) -> impl Fn(&PathView<'_, f64>) -> Vec<f64> + Sync {
    move |p| p.grid.points().iter().map(|&t| rate * t).collect()
}

/// Negative control of an initial enlargement: the base compensator under
/// `Z = 1, g(L) = L`, which picks up `Cov(L, X_t - X_s)`. Also reports that
/// the estimate matches that covariance.
fn control_reports(
    control: &MartingaleTest,
    pairs: &[(f64, f64)],
    label: &str,
    covariance: impl Fn(f64, f64) -> f64,
    threshold: f64,
    ctx: &ReportContext,
) -> Vec<TestReport> {
    let mut out = Vec::new();
    for (r, &(s, t)) in control.reports(&ctx.clone().negative()).into_iter().zip(pairs) {
        let name = format!("{label} matches Cov(L, X_t - X_s) (s={s}, t={t})");
        out.push(TestReport::two_sided(name, r.estimate, covariance(s, t), r.stderr, threshold, r.n_paths, ctx));
        out.push(r);
    }
    out
}

fn max_pair_time(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|p| p.1).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------

pub(super) fn bridge_brownian(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let pairs = p.pairs()?;
    let x = p.get(&c.density_x, "density_x")?;
    let grid = p.grid(p.n_steps()?, &pair_times(&pairs))?;
    let dgrid = grid.truncated(max_pair_time(&pairs));
    let mut test = MartingaleTest::new("compensated B", &grid, &pairs, &Z_FAMILY, &G_FAMILY, thr)?;
    let mut control = MartingaleTest::new("uncompensated B", &grid, &pairs, &[ZFunctional::One], &[GFunctional::Identity], thr)?;
    let mut density = MartingaleTest::new(format!("density q(x={x})"), &dgrid, &pairs, &Z_FAMILY, &[GFunctional::One], thr)?;
    for chunk in batches(p.n_paths()?, grid.len()) {
        let b = simulate_brownian(&grid, chunk, seed)?;
        let l = b.terminal();
        test.accumulate(&b, |v| bridge_compensator(v, l[v.index], horizon), &l)?;
        control.accumulate(&b, no_compensator, &l)?;
        let q = prefix_bundle(&b, &dgrid, |t, y| bb_density_q(t, y, x, horizon))?;
        density.accumulate(&q, no_compensator, &vec![0.0; q.n_paths()])?;
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = test.reports(&ctx);
    reports.extend(control_reports(&control, &pairs, "uncompensated B", |s, t| t - s, thr, &ctx));
    reports.extend(density.reports(&ReportContext::new(seed, dgrid.summary())));

    // int q(t, b, x) p_T(x) dx = 1
    let mut worst = 0.0f64;
    let mut checked = 0u64;
    for t in pair_times(&pairs).into_iter().chain([0.0]) {
        for b in [-1.0, 0.0, 1.5] {
            let half = 12.0 * horizon.sqrt();
            let total = simpson(|y| bb_density_q(t, b, y, horizon).unwrap_or(f64::NAN) * gaussian_density(y, horizon), b - half, b + half, 40_000);
            worst = worst.max((total - 1.0).abs());
            checked += 1;
        }
    }
    let name = "density q normalizes against the law of B_T: max |int q dP - 1|";
    reports.push(TestReport::one_sided(name, worst, 0.0, GAUSSIAN_NORMALIZATION, checked, &ReportContext::new(seed, "quadrature")));
    Ok(ExperimentOutput::new(reports))
}

pub(super) fn bridge_poisson(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr) = (p.seed(), p.threshold());
    let rate = p.get(&c.lambda, "lambda")?;
    let k = p.get(&c.density_k, "density_k")?;
    let pairs = p.pairs()?;
    let grid = p.grid(p.n_steps()?, &pair_times(&pairs))?;
    let dgrid = grid.truncated(max_pair_time(&pairs));
    let mut test = MartingaleTest::new("compensated N", &grid, &pairs, &Z_FAMILY, &G_FAMILY, thr)?;
    let mut control = MartingaleTest::new("N - rate t", &grid, &pairs, &[ZFunctional::One], &[GFunctional::Identity], thr)?;
    let mut density = MartingaleTest::new(format!("density q(k={k})"), &dgrid, &pairs, &Z_FAMILY, &[GFunctional::One], thr)?;
    for chunk in batches(p.n_paths()?, grid.len()) {
        let b = simulate_poisson(rate, &grid, chunk, seed)?;
        let l = b.aux_column("N_T")?;
        test.accumulate(&b, |v| poisson_bridge_compensator(v, l[v.index]), &l)?;
        control.accumulate(&b, linear_compensator(rate), &l)?;
        let q = prefix_bundle(&b, &dgrid, |t, n| poisson_density_q(t, k, n as u64, rate))?;
        density.accumulate(&q, no_compensator, &vec![0.0; q.n_paths()])?;
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = test.reports(&ctx);
    reports.extend(control_reports(&control, &pairs, "N - rate t", |s, t| rate * (t - s), thr, &ctx));
    reports.extend(density.reports(&ReportContext::new(seed, dgrid.summary())));

    // sum_k q(t, k, n) P{N_1 = k} = 1
    let mut worst = 0.0f64;
    let mut checked = 0u64;
    let span = 200 + (20.0 * rate) as u64;
    for t in pair_times(&pairs).into_iter().chain([0.0]) {
        for count in [0u64, 1, 3] {
            let total: f64 = (count..count + span)
                .map(|kk| poisson_density_q(t, kk, count, rate).unwrap_or(f64::NAN) * poisson_pmf(kk, rate))
                .sum();
            worst = worst.max((total - 1.0).abs());
            checked += 1;
        }
    }
    let name = "density q normalizes against the law of N_1: max |sum q P - 1|";
    reports.push(TestReport::one_sided(name, worst, 0.0, POISSON_NORMALIZATION, checked, &ReportContext::new(seed, "series")));
    Ok(ExperimentOutput::new(reports))
}

pub(super) fn nth_jump(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr) = (p.seed(), p.threshold());
    let rate = p.get(&c.lambda, "lambda")?;
    let n = p.get(&c.n, "n")?;
    let pairs = p.pairs()?;
    let grid = p.grid(p.n_steps()?, &pair_times(&pairs))?;
    let mut test = MartingaleTest::new("compensated N", &grid, &pairs, &Z_FAMILY, &G_FAMILY, thr)?;
    let mut control = MartingaleTest::new("compensator without 1{T_n <= t}", &grid, &pairs, &[ZFunctional::One], &[GFunctional::One], thr)?;
    let mut arrivals = Vec::with_capacity(p.n_paths()?);
    for chunk in batches(p.n_paths()?, grid.len()) {
        let b = simulate_poisson_with_nth(rate, &grid, n, chunk, seed)?;
        let l = b.aux_column("T_n")?;
        test.accumulate(&b, |v| nth_jump_compensator(v, l[v.index], n, rate), &l)?;
        let truncated = |v: &PathView<'_, f64>| {
            let tn = l[v.index];
            let a = nth_jump_compensator(v, tn, n, rate);
            a.into_iter().zip(v.grid.points()).map(|(a, &t)| if tn <= t { a - 1.0 } else { a }).collect()
        };
        control.accumulate(&b, truncated, &l)?;
        arrivals.extend(l);
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = test.reports(&ctx);
    reports.extend(control.reports(&ctx.clone().negative()));
    let law = |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - erlang_survival(n as u64, rate, x) };
    reports.push(ks_test(format!("T_{n} ~ Gamma({n}, {rate}) KS"), &arrivals, law, KS_LEVEL, &ReportContext::new(seed, "exact arrivals"))?);
    Ok(ExperimentOutput::new(reports))
}

pub(super) fn hitting_time(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr) = (p.seed(), p.threshold());
    let n_steps = p.n_steps()?;
    let scheme = c.scheme.unwrap_or_default();
    let kind = c.refinement.unwrap_or(RefinementKind::Graded);
    let per_path = |id: u64| -> Result<(f64, bool, f64)> {
        let tau: f64 = hitting_time_unit(seed, id);
        let half = 0.5 * tau;
        let grid = match kind {
            RefinementKind::Graded if c.ratio.is_none() => hitting_bridge_grid(tau, n_steps, &[half])?,
            _ => with_nodes(make_grid(tau, n_steps, p.refinement(n_steps))?, &[half])?,
        };
        let pts = grid.points();
        let mut row = vec![0.0; pts.len()];
        let mut rng = PathRng::new(seed, Domain::Euler, id);
        let early = fill_hitting_bridge(&mut row, pts, tau, 0.0, &mut rng, scheme);
        let last = grid.last_index_before(tau);
        let crossed = early || row[..last].iter().any(|&b| b <= -1.0);
        // |1 + B_t|^2 is a squared 3-d Bessel bridge from 1 to 0: mean 1/4 + 3 tau/4 at tau/2
        let target = 0.25 + 0.75 * tau;
        let gap = 1.0 + row[node(&grid, half)?];
        Ok((row[last] + 1.0, crossed, gap * gap / target - 1.0))
    };
    let n = p.n_paths()?;
    let results: Result<Vec<_>> = par_map_paths(PathRange::new(0, n), per_path).into_iter().collect();
    let mut pin = PinningTest::default();
    let mut bessel = MeanTest::new(vec![("E[(1 + B_{tau/2})^2] / (1/4 + 3 tau/4) - 1".into(), 0.0)], thr);
    let mut crossings = 0usize;
    for (residual, crossed, rel) in results? {
        pin.push(residual);
        bessel.push(&[rel]);
        crossings += usize::from(crossed);
    }
    let summary = format!("per-path grid on [0, tau], {n_steps} steps, {kind:?} refinement, {scheme:?}").to_lowercase();
    let ctx = ReportContext::new(seed, summary);
    let mut reports = vec![pin.report("pinning RMS |B + 1| at the last node before tau", PINNING_RMS, &ctx)];
    let frac = crossings as f64 / n as f64;
    reports.push(TestReport::one_sided(
        "fraction of paths touching -1 before the last node",
        frac,
        (frac * (1.0 - frac) / n as f64).sqrt(),
        CROSSING_FRACTION,
        n as u64,
        &ctx,
    ));
    reports.extend(bessel.reports(&ctx));

    let taus: Vec<f64> = sample_hitting_time_unit(p.get(&c.ks_samples, "ks_samples")?, seed)?;
    let kctx = ReportContext::new(seed, "exact sampler");
    reports.push(ks_test("tau KS vs 2 Phi(-1/sqrt(t))", &taus, |t| hitting_law(t, 1.0), KS_LEVEL, &kctx)?);
    reports.push(ks_test("tau KS vs the level -2 law 2 Phi(-2/sqrt(t))", &taus, |t| hitting_law(t, 2.0), KS_LEVEL, &kctx.negative())?);
    Ok(ExperimentOutput::new(reports))
}

/// `P{tau <= t}` for the first passage of Brownian motion to `-level`.
fn hitting_law(t: f64, level: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        2.0 * normal_cdf(-level / t.sqrt())
    }
}

/// Ornstein-Uhlenbeck paths `dY = -a Y dt + dB` from 0 with exact Gaussian transitions.
fn simulate_ou(a: f64, grid: &TimeGrid<f64>, range: PathRange, seed: u64) -> Result<PathBundle<f64>> {
    let pts = grid.points();
    let (values, _) = par_fill_rows(range, pts.len(), |id, row: &mut [f64]| {
        let mut rng = PathRng::new(seed, Domain::Euler, id);
        row[0] = 0.0;
        for i in 1..pts.len() {
            let decay = (-a * (pts[i] - pts[i - 1])).exp();
            row[i] = row[i - 1] * decay + ((1.0 - decay * decay) / (2.0 * a)).sqrt() * rng.normal();
        }
    });
    PathBundle::new(grid.clone(), values, AuxTable::empty(), BundleMeta { seed, first_path: range.start, ..Default::default() })
}

pub(super) fn diffusion_drift(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let a = p.get(&c.ou_rate, "ou_rate")?;
    let pairs = p.pairs()?;
    let grid = p.grid(p.n_steps()?, &pair_times(&pairs))?;
    let stop = node(&grid, max_pair_time(&pairs))?;
    let kernel = ou_kernel(a);
    // int_0^t (-a Y + k(u, Y, L)) du up to the last pair time, held afterwards
    let compensator = |v: &PathView<'_, f64>, l: f64, informed: bool| -> Vec<f64> {
        let pts = v.grid.points();
        let drift: Vec<f64> = (0..=stop)
            .map(|i| {
                let (t, y) = (pts[i], v.values[i]);
                let k = if informed {
                    diffusion_info_drift(kernel, t, y, l, horizon, |_| 1.0, default_fd_step(y)).unwrap_or(f64::NAN)
                } else {
                    0.0
                };
                -a * y + k
            })
            .collect();
        let mut acc = crate::special::cumulative_trapezoid(&pts[..=stop], &drift);
        let held = acc[stop];
        acc.resize(pts.len(), held);
        acc
    };
    let mut test = MartingaleTest::new("compensated Y", &grid, &pairs, &Z_FAMILY, &G_FAMILY, thr)?;
    let mut control = MartingaleTest::new("Y + a int Y", &grid, &pairs, &[ZFunctional::One], &[GFunctional::Identity], thr)?;
    for chunk in batches(p.n_paths()?, grid.len()) {
        let b = simulate_ou(a, &grid, chunk, seed)?;
        let l = b.terminal();
        test.accumulate(&b, |v| compensator(v, l[v.index], true), &l)?;
        control.accumulate(&b, |v| compensator(v, l[v.index], false), &l)?;
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = test.reports(&ctx);
    if reports.iter().any(|r| !r.statistic.is_finite()) {
        return Err(Error::Domain("OU information drift not finite along some path".into()));
    }
    let cov = |s: f64, t: f64| ((-a * (horizon - t)).exp() - (-a * (horizon - s)).exp()) / a;
    reports.extend(control_reports(&control, &pairs, "Y + a int Y", cov, thr, &ctx));
    Ok(ExperimentOutput::new(reports))
}

fn schedule_parts(c: &ExperimentConfig, horizon: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = Params(c);
    let mut breaks = vec![0.0];
    breaks.extend(p.get(&c.sigma_switch, "sigma_switch")?);
    breaks.push(horizon);
    Ok((breaks, p.get(&c.sigma_levels, "sigma_levels")?))
}

fn ordered_pairs(times: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i..] {
            out.push((s.min(t), s.max(t)));
        }
    }
    out
}

pub(super) fn noisy_signal(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let (breaks, levels) = schedule_parts(c, horizon)?;
    let schedule = VarianceSchedule::new(breaks, levels, 0.0)?;
    let checkpoints = p.get(&c.checkpoints, "checkpoints")?;
    let grid = p.grid(p.n_steps()?, &checkpoints)?;
    let pairs = ordered_pairs(&checkpoints);
    let nodes: Vec<(usize, usize)> = pairs.iter().map(|&(s, t)| Ok((node(&grid, s)?, node(&grid, t)?))).collect::<Result<_>>()?;
    let moment: Vec<f64> = pairs.iter().map(|&(s, _)| peof_innovation_signal_moment(&schedule, s)).collect::<Result<_>>()?;
    let items = |label: &str| -> Vec<(String, f64)> {
        pairs.iter().zip(&moment).map(|(&(s, t), &m)| (format!("{label}(t={t}) V(s={s})] vs quadrature"), m)).collect()
    };
    let mut cov = CovarianceTest::new("innovation W~", &pairs, |s: f64, t: f64| s.min(t), thr);
    let mut cross = MeanTest::new(items("E[W~"), thr);
    let mut control = MeanTest::new(items("E[B"), thr);
    for chunk in batches(p.n_paths()?, 3 * grid.len()) {
        let sim = simulate_peof(&schedule, &grid, chunk, seed)?;
        cov.accumulate(&sim.innovation)?;
        for k in 0..sim.b.n_paths() {
            let (w, v, b) = (sim.innovation.path(k).values, sim.v.path(k).values, sim.b.path(k).values);
            let row: Vec<f64> = nodes.iter().map(|&(i, j)| w[j] * v[i]).collect();
            cross.push(&row);
            let row: Vec<f64> = nodes.iter().map(|&(i, j)| b[j] * v[i]).collect();
            control.push(&row);
        }
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = cov.reports(&ctx);
    reports.extend(cross.reports(&ctx));
    for (m, &(s, t)) in cross.moments().iter().zip(&pairs) {
        // pass iff the mean exceeds `thr` standard errors
        let name = format!("E[W~(t={t}) V(s={s})] > 0: -estimate <= -{thr} stderr");
        reports.push(TestReport::one_sided(name, -m.mean, m.stderr(), -thr * m.stderr(), m.n, &ctx));
    }
    reports.extend(control.reports(&ctx.clone().negative()));
    Ok(ExperimentOutput::new(reports))
}

pub(super) fn prog_bridge(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let scheme = c.scheme.unwrap_or_default();
    let (breaks, levels) = schedule_parts(c, horizon)?;
    let schedule = VarianceSchedule::bridge(breaks, levels)?;
    let checkpoints = p.get(&c.checkpoints, "checkpoints")?;
    let pairs = p.pairs()?;
    let mut nodes = checkpoints.clone();
    nodes.extend(pair_times(&pairs).into_iter().filter(|&t| t < horizon));
    let n_steps = p.n_steps()?;
    let n_paths = p.n_paths()?;
    let grid = p.grid(n_steps, &nodes)?;
    schedule.check_bridge(&grid)?;
    let cp_nodes: Vec<usize> = checkpoints.iter().map(|&t| node(&grid, t)).collect::<Result<_>>()?;
    let gap_items = checkpoints.iter().map(|&t| (format!("E[(B_t - V_t)^2] vs v(t) - t (t={t})"), schedule.v(t) - t)).collect();
    let mut gap = MeanTest::new(gap_items, thr);
    let mut product = MeanTest::new(checkpoints.iter().map(|&t| (format!("E[B_t V_t] vs t (t={t})"), t)).collect(), thr);
    let mut cov = CovarianceTest::new("B", &pairs, |s: f64, t: f64| s.min(t), thr);
    let mut signal = CovarianceTest::new("signal V as a Brownian motion", &pairs, |s: f64, t: f64| s.min(t), thr);
    let mut pin = PinningTest::default();
    let sub = (n_paths / 4).max(2);
    let mut pin_sub = PinningTest::default();
    let live = last_live_node(&grid);
    for chunk in batches(n_paths, 2 * grid.len()) {
        let sim = prog_bridge_simulate(&schedule, &grid, chunk, seed, scheme)?;
        cov.accumulate(&sim.b)?;
        signal.accumulate(&sim.v)?;
        for k in 0..sim.b.n_paths() {
            let (b, v) = (sim.b.path(k).values, sim.v.path(k).values);
            gap.push(&cp_nodes.iter().map(|&i| (b[i] - v[i]).powi(2)).collect::<Vec<_>>());
            product.push(&cp_nodes.iter().map(|&i| b[i] * v[i]).collect::<Vec<_>>());
            let residual = b[live] - v[v.len() - 1];
            pin.push(residual);
            if (chunk.start as usize + k) < sub {
                pin_sub.push(residual);
            }
        }
    }
    let fine_grid = p.grid(4 * n_steps, &nodes)?;
    let fine_live = last_live_node(&fine_grid);
    let mut pin_fine = PinningTest::default();
    for chunk in batches(sub, 2 * fine_grid.len()) {
        let sim = prog_bridge_simulate(&schedule, &fine_grid, chunk, seed, scheme)?;
        for k in 0..sim.b.n_paths() {
            let (b, v) = (sim.b.path(k).values, sim.v.path(k).values);
            pin_fine.push(b[fine_live] - v[v.len() - 1]);
        }
    }
    let ctx = ReportContext::new(seed, grid.summary());
    let mut reports = gap.reports(&ctx);
    reports.extend(cov.reports(&ctx));
    reports.extend(product.reports(&ctx));
    reports.push(pin.report("terminal pinning RMS |B - V_T| at the last node before T", PINNING_RMS, &ctx));
    let ratio = pin_fine.rms() / pin_sub.rms();
    let name = format!("terminal RMS ratio under 4x refinement ({} -> {} steps, {sub} paths)", grid.n_steps(), fine_grid.n_steps());
    reports.push(TestReport::one_sided(name, ratio, 0.0, 1.0, sub as u64, &ctx));
    reports.extend(signal.reports(&ctx.clone().negative()));
    Ok(ExperimentOutput::new(reports))
}

pub(super) fn cf_identity(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let thetas = p.get(&c.thetas, "thetas")?;
    let rate = p.get(&c.lambda, "lambda")?;
    let pairs = p.pairs()?;
    let grid = p.grid(p.n_steps()?, &pair_times(&pairs))?;
    let ctx = ReportContext::new(seed, grid.summary());
    let theta_ctl = thetas.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
    let mut reports = Vec::new();
    for (label, model) in [("brownian", LevyModel::brownian()), ("poisson", LevyModel::poisson(rate)?)] {
        let pure_jump = label == "poisson";
        for &(s, t) in &pairs {
            let mut plain = CfIdentityTest::new(&thetas, s, t, horizon, thr)?;
            let mut cosine = CfIdentityTest::new(&thetas, s, t, horizon, thr)?;
            let (i, j) = (node(&grid, s)?, node(&grid, t)?);
            let name = format!("{label}: E[sin(theta Z_T) (Z_t - Z_s)] = 0 without the time integral (theta={theta_ctl}, s={s}, t={t})");
            let mut control = MeanTest::new(vec![(name, 0.0)], thr);
            for chunk in batches(p.n_paths()?, grid.len()) {
                let b = simulate_levy(&model, &grid, chunk, seed)?;
                plain.accumulate(&b, pure_jump, |_| 1.0)?;
                cosine.accumulate(&b, pure_jump, f64::cos)?;
                for v in b.paths() {
                    control.push(&[(theta_ctl * v.last()).sin() * (v.values[j] - v.values[i])]);
                }
            }
            reports.extend(plain.reports(&format!("{label} h=1"), &ctx));
            reports.extend(cosine.reports(&format!("{label} h=cos(Z_s)"), &ctx));
            if theta_ctl != 0.0 {
                reports.extend(control.reports(&ctx.clone().negative()));
            }
        }
    }
    Ok(ExperimentOutput::new(reports))
}

/// `P{inf_{u <= T} (mu u + sigma W_u) <= b}` for `b < 0`.
fn first_passage_cdf(b: f64, mu: f64, sigma: f64, horizon: f64) -> f64 {
    let sd = sigma * horizon.sqrt();
    normal_cdf((b - mu * horizon) / sd) + (2.0 * mu * b / (sigma * sigma)).exp() * normal_cdf((b + mu * horizon) / sd)
}

pub(super) fn structural_default(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr, horizon) = (p.seed(), p.threshold(), p.horizon());
    let jumps = match c.jump_rate {
        Some(rate) if rate > 0.0 => Some(JumpSpec {
            rate,
            law: JumpLaw::Normal { mean: c.jump_mean.unwrap_or(0.0), sd: c.jump_sd.unwrap_or(0.0) },
        }),
        _ => None,
    };
    let model = StructuralModel {
        mu: p.get(&c.mu, "mu")?,
        sigma: p.get(&c.vol, "vol")?,
        jumps,
        barrier: p.get(&c.barrier, "barrier")?,
        v0: p.get(&c.firm_value, "firm_value")?,
        horizon,
    };
    let fine = p.n_steps()?;
    let strides: Vec<usize> = [16, 4, 1].into_iter().filter(|&s| fine.is_multiple_of(s) && fine / s >= 2).collect();
    let n = p.n_paths()?;
    let taus = structural_default_nested(&model, fine, &strides, n, seed)?;
    let ctx = ReportContext::new(seed, format!("T={horizon} steps={fine} uniform, monitored at strides {strides:?}"));
    let nf = n as f64;
    let defaulted: Vec<Vec<bool>> = taus.iter().map(|ts| ts.iter().map(|&t| t <= horizon).collect()).collect();
    let probs: Vec<f64> = defaulted.iter().map(|d| d.iter().filter(|&&x| x).count() as f64 / nf).collect();
    let mut reports = Vec::new();
    let level = (model.barrier / model.v0).ln();
    let target = (jumps.is_none()).then(|| first_passage_cdf(level, model.mu, model.sigma, horizon));
    for (k, &stride) in strides.iter().enumerate() {
        let steps = fine / stride;
        let prob = probs[k];
        let se = (prob * (1.0 - prob) / nf).sqrt();
        if let Some(target) = target {
            let h = horizon / steps as f64;
            let shifted = level - MONITORING_SHIFT * model.sigma * h.sqrt();
            let bias = target - first_passage_cdf(shifted, model.mu, model.sigma, horizon);
            let name = format!("|P(tau <= T) - {target:.4}| within {thr} se + monitoring bias ({steps} steps)");
            reports.push(TestReport::one_sided(name, (prob - target).abs(), se, thr * se + bias, n as u64, &ctx));
        }
        if k > 0 {
            // paired difference: finer monitoring can only add defaults
            let diff: Vec<f64> = defaulted[k].iter().zip(&defaulted[k - 1]).map(|(&a, &b)| f64::from(u8::from(a)) - f64::from(u8::from(b))).collect();
            let mean = diff.iter().sum::<f64>() / nf;
            let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let se_diff = (var / nf).sqrt();
            let coarse = fine / strides[k - 1];
            let name = format!("bias shrinks {coarse} -> {steps} steps: |error| increase <= {thr} se");
            let change = match target {
                Some(t) => (prob - t).abs() - (probs[k - 1] - t).abs(),
                None => -mean,
            };
            reports.push(TestReport::one_sided(name, change, se_diff, thr * se_diff, n as u64, &ctx));
        }
    }
    if target.is_some() {
        let prob = *probs.last().expect("at least one stride");
        let se = (prob * (1.0 - prob) / nf).sqrt();
        let name = "P(tau <= T) vs the unreflected probability P(L_T <= log(K/V0))";
        let unreflected = normal_cdf((level - model.mu * horizon) / (model.sigma * horizon.sqrt()));
        reports.push(TestReport::two_sided(name, prob, unreflected, se, thr, n as u64, &ctx.clone().negative()));
    }
    let times: Vec<f64> = (0..=64).map(|i| horizon * i as f64 / 64.0).collect();
    let curve = default_prob_curve(taus.last().expect("at least one stride"), &times);
    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    let mut out = ExperimentOutput::new(reports);
    out.tables.push(Table { file_name: "default_curve.csv".into(), contents: String::from_utf8(csv).map_err(|e| invalid(e.to_string()))? });
    Ok(out)
}

pub(super) fn kyle_back(c: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = Params(c);
    let (seed, thr) = (p.seed(), p.threshold());
    let config = KyleBackConfig {
        n_steps: p.n_steps()?,
        n_paths: p.n_paths()?,
        seed,
        drift_variant: c.drift_variant.unwrap_or_default(),
        post_default: c.post_default.unwrap_or_default(),
        scheme: c.scheme.unwrap_or_default(),
    };
    config.validate()?;
    let pairs = p.pairs()?;
    let mut cov = CovarianceTest::new("R*", &pairs, |s: f64, t: f64| s.min(t), thr);
    let mut pin = PinningTest::default();
    let mut hits = Vec::with_capacity(config.n_paths);
    let mut summary = String::new();
    for chunk in batches(config.n_paths, config.n_steps + 1) {
        let out = kyle_back_simulate_range::<f64>(&config, chunk)?;
        cov.accumulate(&out.paths)?;
        out.pre_default_gap.iter().flatten().for_each(|&g| pin.push(g));
        hits.extend(out.hit_times);
        summary = out.paths.grid().summary();
    }
    let variant = format!("{:?}/{:?}/{:?}", config.drift_variant, config.post_default, config.scheme).to_lowercase();
    let ctx = ReportContext::new(seed, format!("{summary}, {variant}"));
    let mut reports = cov.reports(&ctx);
    let law = |t: f64| hitting_law(t.min(1.0), 1.0);
    reports.push(ks_test("hitting time of -1 KS vs 2 Phi(-1/sqrt(t)) on [0, 1]", &hits, law, KS_LEVEL, &ctx)?);
    reports.push(pin.report("pre-default pinning RMS |R* + 1| at the last node before tau", PINNING_RMS, &ctx));
    let wrong = |t: f64| hitting_law(t.min(1.0), 2.0);
    reports.push(ks_test("hitting time of -1 KS vs the level -2 law", &hits, wrong, KS_LEVEL, &ctx.negative())?);
    Ok(ExperimentOutput::new(reports))
}

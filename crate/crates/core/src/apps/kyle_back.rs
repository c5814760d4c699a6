use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::initial_enlargement::{fill_hitting_bridge, hitting_bridge_grid, BridgeScheme};
use crate::paths::{hitting_time_unit, make_grid, par_fill_rows, AuxTable, BundleMeta, PathBundle, PathRange, Refinement, DEFAULT_DRIFT_CLIP};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;

/// Which insider drift drives the total order `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DriftVariant {
    /// `(1/(1+R) - (1-R)/(tau-t)) 1{tau <= t}`, literally as displayed.
    AsPrinted,
    /// `1/(1+R) - (1+R)/(tau-t)` for `t < tau`: the hitting-time
    /// decomposition of Brownian motion, so `R` has the law of `Z`.
    #[default]
    G4Consistent,
}

/// What `R` does after the default time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PostDefault {
    /// Continues as a driftless Brownian motion from -1, matching the law
    /// of `Z` on all of `[0, 1]`.
    #[default]
    Continue,
    /// Stays at -1.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KyleBackConfig {
    /// Steps of the uniform output grid on `[0, 1]`, also the number of
    /// graded steps toward `tau`.
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub drift_variant: DriftVariant,
    pub post_default: PostDefault,
    pub scheme: BridgeScheme,
}

impl Default for KyleBackConfig {
    fn default() -> Self {
        Self {
            n_steps: 4096,
            n_paths: 20_000,
            seed: 0,
            drift_variant: DriftVariant::default(),
            post_default: PostDefault::default(),
            scheme: BridgeScheme::default(),
        }
    }
}

impl KyleBackConfig {
    pub const HORIZON: f64 = 1.0;
    pub const BARRIER: f64 = -1.0;

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_steps >= 2, "n_steps must be at least 2, got {}", self.n_steps);
        ensure!(self.n_paths >= 1, "n_paths must be at least 1");
        Ok(())
    }
}

/// Paths of `R` on the uniform output grid with aux `tau`, plus per-path
/// diagnostics.
#[derive(Debug, Clone)]
pub struct KyleBackOutput<F> {
    pub paths: PathBundle<F>,
    /// First time `R` reaches -1, `+inf` if not before 1.
    pub hit_times: Vec<F>,
    /// `R + 1` at the last integrated node before `tau`, for paths with `tau <= 1`.
    pub pre_default_gap: Vec<Option<F>>,
}

struct PathResult<F> {
    hit: F,
    gap: Option<F>,
}

/// Runs `config.n_paths` paths starting at path 0.
pub fn kyle_back_simulate<F: Real>(config: &KyleBackConfig) -> Result<KyleBackOutput<F>> {
    kyle_back_simulate_range(config, PathRange::new(0, config.n_paths))
}

/// Simulates the paths in `range`; `tau` of path `i` is
/// [`hitting_time_unit`]`(seed, i)`.
pub fn kyle_back_simulate_range<F: Real>(config: &KyleBackConfig, range: PathRange) -> Result<KyleBackOutput<F>> {
    config.validate()?;
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let out_grid = make_grid(F::one(), config.n_steps, Refinement::Uniform)?;
    let out_pts = out_grid.points();
    let seed = config.seed;
    let (values, results) = par_fill_rows(range, out_pts.len(), |id, row: &mut [F]| -> Result<PathResult<F>> {
        let tau: F = hitting_time_unit(seed, id);
        let mut rng = PathRng::new(seed, Domain::KyleBack, id);
        match config.drift_variant {
            DriftVariant::G4Consistent => g4_path(row, out_pts, tau, config, &mut rng),
            DriftVariant::AsPrinted => printed_path(row, out_pts, tau, &mut rng, id),
        }
    });
    let mut hit_times = Vec::with_capacity(range.count);
    let mut pre_default_gap = Vec::with_capacity(range.count);
    for r in results {
        let r = r?;
        hit_times.push(r.hit);
        pre_default_gap.push(r.gap);
    }
    let taus: Vec<F> = range.ids().map(|id| hitting_time_unit(seed, id)).collect();
    let meta = BundleMeta {
        seed,
        first_path: range.start,
        absorbed_paths: hit_times.iter().filter(|t| t.is_finite()).count() as u64,
        ..Default::default()
    };
    let paths = PathBundle::new(out_grid, values, AuxTable::single("tau", taus), meta)?;
    Ok(KyleBackOutput { paths, hit_times, pre_default_gap })
}

fn g4_path<F: Real>(row: &mut [F], out: &[F], tau: F, config: &KyleBackConfig, rng: &mut PathRng) -> Result<PathResult<F>> {
    if tau > F::one() {
        let early = fill_hitting_bridge(row, out, tau, F::zero(), rng, config.scheme);
        let hit = if early { first_at_barrier(row, out) } else { F::infinity() };
        return Ok(PathResult { hit, gap: None });
    }
    let fine = hitting_bridge_grid(tau, config.n_steps, out)?;
    let fp = fine.points();
    let mut buf = vec![F::zero(); fp.len()];
    let early = fill_hitting_bridge(&mut buf, fp, tau, F::zero(), rng, config.scheme);
    let last_live = fine.last_index_before(tau);
    let hit = if early { first_at_barrier(&buf, fp) } else { tau };
    let gap = Some(buf[last_live] + F::one());
    // sample the pre-default path at the output nodes, all of which are
    // fine nodes unless they fall in the final gap before tau
    let mut k = 0;
    let mut after = None;
    for (i, &t) in out.iter().enumerate() {
        if t >= tau {
            after = Some(i);
            break;
        }
        while k + 1 < fp.len() && fp[k + 1] <= t {
            k += 1;
        }
        row[i] = buf[k];
    }
    if let Some(first) = after {
        let mut x = -F::one();
        let mut prev = tau;
        for i in first..out.len() {
            if !early && config.post_default == PostDefault::Continue {
                x += F::lit(rng.normal()) * (out[i] - prev).sqrt();
            }
            prev = out[i];
            row[i] = x;
        }
    }
    Ok(PathResult { hit, gap })
}

fn first_at_barrier<F: Real>(values: &[F], pts: &[F]) -> F {
    values.iter().zip(pts).find(|(&x, _)| x <= -F::one()).map_or(F::infinity(), |(_, &t)| t)
}

/// Explicit Euler of the displayed equation on the output grid, absorbed at -1.
fn printed_path<F: Real>(row: &mut [F], out: &[F], tau: F, rng: &mut PathRng, id: u64) -> Result<PathResult<F>> {
    let clip = F::lit(DEFAULT_DRIFT_CLIP);
    let mut x = F::zero();
    row[0] = x;
    let mut hit = F::infinity();
    for i in 0..out.len() - 1 {
        let (t, h) = (out[i], out[i + 1] - out[i]);
        let mut a = F::zero();
        if tau <= t {
            a = F::one() / (F::one() + x) - (F::one() - x) / (tau - t);
            if !a.is_finite() {
                return Err(Error::NumericFailure { path: id, node: i, detail: format!("drift {a} at t={t}, R={x}, tau={tau}") });
            }
            a = a.max(-clip).min(clip);
        }
        x += a * h + F::lit(rng.normal()) * h.sqrt();
        if x <= -F::one() {
            hit = out[i + 1];
            row[i + 1..].iter_mut().for_each(|v| *v = -F::one());
            break;
        }
        row[i + 1] = x;
    }
    Ok(PathResult { hit, gap: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;
    use crate::verify::{ks_test, CovarianceTest, ReportContext};

    #[test]
    fn g4_consistent_has_the_law_of_brownian_motion() {
        let config = KyleBackConfig { n_steps: 1024, n_paths: 4_000, seed: 12, ..Default::default() };
        let out = kyle_back_simulate::<f64>(&config).unwrap();
        let pairs = [(0.25, 0.5), (0.5, 1.0), (1.0, 1.0)];
        let mut cov = CovarianceTest::new("kb", &pairs, |s: f64, t: f64| s.min(t), 4.0);
        cov.accumulate(&out.paths).unwrap();
        let ctx = ReportContext::new(12, "");
        assert!(cov.reports(&ctx).iter().all(|r| r.pass), "{:?}", cov.reports(&ctx));
        let ks = ks_test("hit", &out.hit_times, |t: f64| if t <= 0.0 { 0.0 } else { 2.0 * normal_cdf(-1.0 / t.sqrt()) }, 0.01, &ctx).unwrap();
        assert!(ks.pass, "{ks:?}");
        let gaps: Vec<f64> = out.pre_default_gap.iter().flatten().copied().collect();
        assert!(!gaps.is_empty());
        let rms = (gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt();
        assert!(rms <= 0.05, "rms {rms}");
        // paths with tau <= 1 sit at -1 at the first output node at or after tau
        for (p, h) in out.paths.paths().zip(&out.hit_times) {
            let tau = p.aux("tau").unwrap();
            assert_eq!(h.is_finite(), tau <= 1.0);
        }
    }

    #[test]
    fn hold_variant_freezes_at_barrier() {
        let config = KyleBackConfig { n_steps: 256, n_paths: 200, seed: 3, post_default: PostDefault::Hold, ..Default::default() };
        let out = kyle_back_simulate::<f64>(&config).unwrap();
        for (p, h) in out.paths.paths().zip(&out.hit_times) {
            if h.is_finite() {
                assert_eq!(p.last(), -1.0);
            }
        }
    }

    #[test]
    fn chunks_reproduce_a_single_run() {
        let config = KyleBackConfig { n_steps: 128, n_paths: 50, seed: 9, ..Default::default() };
        let whole = kyle_back_simulate::<f64>(&config).unwrap();
        let a = kyle_back_simulate_range::<f64>(&config, PathRange::new(0, 20)).unwrap();
        let b = kyle_back_simulate_range::<f64>(&config, PathRange::new(20, 30)).unwrap();
        let joined: Vec<f64> = a.paths.values().iter().chain(b.paths.values()).copied().collect();
        assert_eq!(whole.paths.values(), &joined[..]);
    }

    #[test]
    fn as_printed_runs_without_drift_before_default() {
        let config = KyleBackConfig { n_steps: 256, n_paths: 500, seed: 4, drift_variant: DriftVariant::AsPrinted, ..Default::default() };
        let out = kyle_back_simulate::<f64>(&config).unwrap();
        assert!(out.paths.values().iter().all(|x| x.is_finite() && *x >= -1.0));
    }
}

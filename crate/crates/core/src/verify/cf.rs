use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::paths::{make_grid, simulate_levy, LevyModel, PathBundle, PathRange, PathView, Refinement};
use crate::scalar::Real;

use super::moments::Moments;
use super::{ReportContext, TestReport};

/// Paths per simulated batch.
const CHUNK: usize = 8_192;

/// Streaming check of
/// `E[e^{i theta Z_T} h(Z_s) int_s^t (Z_T - Z_u)/(T - u) du] = E[e^{i theta Z_T} h(Z_s) (Z_t - Z_s)]`
/// for a Lévy process `Z`, on real and imaginary parts of the difference.
#[derive(Debug, Clone)]
pub struct CfIdentityTest {
    thetas: Vec<f64>,
    times: (f64, f64, f64),
    threshold: f64,
    acc: Vec<[Moments; 2]>,
}

/// `int_s^t (Z_T - Z_u)/(T - u) du`: exact between jumps for pure-jump paths,
/// trapezoid on the grid otherwise.
fn time_integral<F: Real>(p: &PathView<'_, F>, i: usize, j: usize, horizon: F, pure_jump: bool) -> F {
    let pts = p.grid.points();
    let z_t = p.last();
    if pure_jump {
        let (s, t) = (pts[i], pts[j]);
        let times = p.jump_times.unwrap_or(&[]);
        let sizes = p.jump_sizes.unwrap_or(&[]);
        let mut level = p.values[i];
        let mut a = s;
        let mut acc = F::zero();
        let piece = |a: F, b: F, level: F| (z_t - level) * ((horizon - a) / (horizon - b)).ln();
        for (k, &tj) in times.iter().enumerate() {
            if tj <= s {
                continue;
            }
            if tj > t {
                break;
            }
            acc += piece(a, tj, level);
            level += sizes.get(k).copied().unwrap_or(F::one());
            a = tj;
        }
        acc + piece(a, t, level)
    } else {
        let f: Vec<F> = (i..=j).map(|k| (z_t - p.values[k]) / (horizon - pts[k])).collect();
        (i..j).map(|k| (f[k + 1 - i] + f[k - i]) * (pts[k + 1] - pts[k]) * F::half()).fold(F::zero(), |a, b| a + b)
    }
}

impl CfIdentityTest {
    pub fn new<F: Real>(thetas: &[F], s: F, t: F, horizon: F, threshold: f64) -> Result<Self> {
        ensure!(!thetas.is_empty(), "theta list must be non-empty");
        ensure!(F::zero() <= s && s < t && t < horizon, "need 0 <= s < t < T, got ({s}, {t}, {horizon})");
        Ok(Self {
            thetas: thetas.iter().map(|x| x.as_f64()).collect(),
            times: (s.as_f64(), t.as_f64(), horizon.as_f64()),
            threshold,
            acc: vec![[Moments::default(); 2]; thetas.len()],
        })
    }

    pub fn accumulate<F: Real>(&mut self, bundle: &PathBundle<F>, pure_jump: bool, h: impl Fn(F) -> F + Sync) -> Result<()> {
        let grid = bundle.grid();
        let (s, t, horizon) = self.times;
        let i = grid.index_of(F::lit(s)).ok_or_else(|| crate::error::invalid(format!("s={s} is not a grid node")))?;
        let j = grid.index_of(F::lit(t)).ok_or_else(|| crate::error::invalid(format!("t={t} is not a grid node")))?;
        let horizon = F::lit(horizon);
        let thetas = &self.thetas;
        let rows: Vec<Vec<Complex<f64>>> = (0..bundle.n_paths())
            .into_par_iter()
            .map(|k| {
                let p = bundle.path(k);
                let integral = time_integral(&p, i, j, horizon, pure_jump);
                let gap = (integral - (p.values[j] - p.values[i])).as_f64() * h(p.values[i]).as_f64();
                let z_t = p.last().as_f64();
                thetas.iter().map(|&th| Complex::new(0.0, th * z_t).exp() * gap).collect()
            })
            .collect();
        for row in rows {
            for (acc, d) in self.acc.iter_mut().zip(row) {
                acc[0].push(d.re);
                acc[1].push(d.im);
            }
        }
        Ok(())
    }

    pub fn reports(&self, label: &str, ctx: &ReportContext) -> Vec<TestReport> {
        let (s, t, horizon) = self.times;
        let mut out = Vec::with_capacity(2 * self.thetas.len());
        for (&th, [re, im]) in self.thetas.iter().zip(&self.acc) {
            for (part, m) in [("re", re), ("im", im)] {
                let name = format!("{label} cf-identity(theta={th}, s={s}, t={t}, T={horizon}) {part}");
                out.push(TestReport::two_sided(name, m.mean, 0.0, m.stderr(), self.threshold, m.n, ctx));
            }
        }
        out
    }
}

/// Simulates `model` on a uniform grid of `n_steps` (plus `s` and `t`) in
/// batches and runs [`CfIdentityTest`]; two reports (real, imaginary) per theta.
#[allow(clippy::too_many_arguments)]
pub fn cf_identity_test<F: Real>(
    model: &LevyModel<F>,
    thetas: &[F],
    s: F,
    t: F,
    horizon: F,
    h: impl Fn(F) -> F + Sync,
    paths: impl Into<PathRange>,
    seed: u64,
    threshold: f64,
    n_steps: usize,
) -> Result<Vec<TestReport>> {
    let mut test = CfIdentityTest::new(thetas, s, t, horizon, threshold)?;
    for &th in thetas {
        let psi = model.exponent(th);
        ensure!(psi.re.is_finite() && psi.im.is_finite(), "characteristic exponent undefined at theta={th}");
    }
    let grid = make_grid(horizon, n_steps, Refinement::Uniform)?.merged(&[s, t]);
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let pure_jump = !model.has_diffusion();
    for chunk in range.chunks(CHUNK) {
        let bundle = simulate_levy(model, &grid, chunk, seed)?;
        test.accumulate(&bundle, pure_jump, &h)?;
    }
    let label = format!("{:?}", model.kind).to_lowercase();
    Ok(test.reports(&label, &ReportContext::new(seed, grid.summary())))
}

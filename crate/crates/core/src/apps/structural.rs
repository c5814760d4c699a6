use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{make_grid, par_map_paths, JumpLaw, PathRange, Refinement, TimeGrid};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;

use super::{default_prob_curve, DefaultCurve};

/// Compound-Poisson jumps of the log firm value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec<F> {
    pub rate: F,
    pub law: JumpLaw<F>,
}

/// Firm value `V_t = V_0 exp(mu t + sigma W_t + J_t)` with default at the
/// first monitoring time where `V < K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralModel<F> {
    pub mu: F,
    pub sigma: F,
    pub jumps: Option<JumpSpec<F>>,
    pub barrier: F,
    pub v0: F,
    pub horizon: F,
}

impl<F: Real> StructuralModel<F> {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma > F::zero() && self.sigma.is_finite(), "vol must be positive, got {}", self.sigma);
        ensure!(self.mu.is_finite(), "drift must be finite");
        ensure!(self.v0 > F::zero() && self.v0.is_finite(), "V_0 must be positive, got {}", self.v0);
        ensure!(self.barrier > F::zero(), "barrier K must be positive, got {}", self.barrier);
        ensure!(self.barrier < self.v0, "barrier K = {} must lie below V_0 = {}", self.barrier, self.v0);
        ensure!(self.horizon > F::zero() && self.horizon.is_finite(), "horizon must be positive");
        if let Some(j) = self.jumps {
            ensure!(j.rate >= F::zero() && j.rate.is_finite(), "jump rate must be >= 0, got {}", j.rate);
        }
        Ok(())
    }

    /// Default times monitored on `pts` at every stride in `strides`
    /// (`+inf` when the barrier is never breached). Node `i` is monitored by
    /// stride `s` when `i % s == 0`.
    fn first_passages(&self, pts: &[F], strides: &[usize], rng: &mut PathRng) -> Vec<F> {
        let horizon = *pts.last().expect("non-empty grid");
        let mut jumps = Vec::new();
        if let Some(spec) = self.jumps.filter(|j| j.rate > F::zero()) {
            let mut t = F::zero();
            loop {
                t += F::lit(rng.exp1()) / spec.rate;
                if t > horizon {
                    break;
                }
                jumps.push((t, spec.law.sample(rng)));
            }
        }
        let level = (self.barrier / self.v0).ln();
        let mut taus = vec![F::infinity(); strides.len()];
        let mut open = strides.len();
        let mut x = F::zero();
        let mut k = 0;
        for i in 1..pts.len() {
            let h = pts[i] - pts[i - 1];
            x += self.mu * h + self.sigma * h.sqrt() * F::lit(rng.normal());
            while k < jumps.len() && jumps[k].0 <= pts[i] {
                x += jumps[k].1;
                k += 1;
            }
            if x < level {
                for (tau, &s) in taus.iter_mut().zip(strides) {
                    if tau.is_infinite() && i % s == 0 {
                        *tau = pts[i];
                        open -= 1;
                    }
                }
                if open == 0 {
                    break;
                }
            }
        }
        taus
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralOutput<F> {
    /// Default times, `+inf` for survivors.
    pub tau: Vec<F>,
    /// `P{tau <= t}` at the grid nodes.
    pub curve: DefaultCurve,
}

/// Default times monitored on every node of `grid`, and the default curve.
pub fn structural_default_simulate<F: Real>(
    model: &StructuralModel<F>,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<StructuralOutput<F>> {
    model.validate()?;
    ensure!(
        (grid.horizon() - model.horizon).abs() <= F::lit(1e-12) * model.horizon.max(F::one()),
        "grid horizon {} differs from model horizon {}",
        grid.horizon(),
        model.horizon
    );
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let pts = grid.points();
    let tau: Vec<F> = par_map_paths(range, |id| {
        let mut rng = PathRng::new(seed, Domain::Structural, id);
        model.first_passages(pts, &[1], &mut rng)[0]
    });
    let curve = default_prob_curve(&tau, pts);
    Ok(StructuralOutput { tau, curve })
}

/// One simulation on a uniform grid of `fine_steps`, monitored on the nested
/// subgrids of every stride; returns default times per stride. Common random
/// numbers make coarser monitoring default no earlier than finer.
pub fn structural_default_nested<F: Real>(
    model: &StructuralModel<F>,
    fine_steps: usize,
    strides: &[usize],
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<Vec<Vec<F>>> {
    model.validate()?;
    ensure!(!strides.is_empty(), "at least one stride is required");
    ensure!(
        strides.iter().all(|&s| s >= 1 && fine_steps.is_multiple_of(s) && fine_steps / s >= 2),
        "every stride must divide {fine_steps} into at least 2 steps"
    );
    let grid = make_grid(model.horizon, fine_steps, Refinement::Uniform)?;
    let range = paths.into();
    let per_path: Vec<Vec<F>> = par_map_paths(range, |id| {
        let mut rng = PathRng::new(seed, Domain::Structural, id);
        model.first_passages(grid.points(), strides, &mut rng)
    });
    Ok((0..strides.len()).map(|k| per_path.iter().map(|row| row[k]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;

    fn unit_model() -> StructuralModel<f64> {
        StructuralModel { mu: 0.0, sigma: 1.0, jumps: None, barrier: (-1.0f64).exp(), v0: 1.0, horizon: 1.0 }
    }

    #[test]
    fn rejects_barrier_above_start() {
        let m = StructuralModel { barrier: 2.0, ..unit_model() };
        let g = make_grid(1.0, 4, Refinement::Uniform).unwrap();
        assert!(structural_default_simulate(&m, &g, 10, 1).is_err());
    }

    #[test]
    fn trivial_survival() {
        let g = make_grid(1.0, 64, Refinement::Uniform).unwrap();
        let tiny_barrier = StructuralModel { barrier: 1e-300, ..unit_model() };
        let out = structural_default_simulate(&tiny_barrier, &g, 1000, 1).unwrap();
        assert!(out.curve.estimate.iter().all(|&p| p == 0.0));
        let calm = StructuralModel { sigma: 1e-9, ..unit_model() };
        let out = structural_default_simulate(&calm, &g, 1000, 1).unwrap();
        assert!(out.tau.iter().all(|t| t.is_infinite()));
    }

    #[test]
    fn unit_barrier_matches_hitting_law_within_bias() {
        let n = 20_000;
        let taus = structural_default_nested(&unit_model(), 4096, &[64, 16, 4, 1], n, 5).unwrap();
        let target = 2.0 * normal_cdf(-1.0);
        let mut previous = 0.0;
        for (k, stride) in [64usize, 16, 4, 1].iter().enumerate() {
            let p = taus[k].iter().filter(|t| **t <= 1.0).count() as f64 / n as f64;
            let h = *stride as f64 / 4096.0;
            // discrete monitoring shifts the barrier by about 0.5826 sqrt(h)
            let bias = target - 2.0 * normal_cdf(-(1.0 + 0.5826 * h.sqrt()));
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((p - target).abs() <= 4.0 * se + bias, "stride {stride}: {p}");
            assert!(p >= previous);
            previous = p;
        }
        for (coarse, fine) in taus[0].iter().zip(&taus[3]) {
            assert!(coarse >= fine);
        }
    }

    #[test]
    fn jumps_only_increase_defaults() {
        let g = make_grid(1.0, 256, Refinement::Uniform).unwrap();
        let down = StructuralModel { jumps: Some(JumpSpec { rate: 2.0, law: JumpLaw::Constant { size: -0.5 } }), ..unit_model() };
        let a = structural_default_simulate(&unit_model(), &g, 5_000, 3).unwrap();
        let b = structural_default_simulate(&down, &g, 5_000, 3).unwrap();
        assert!(b.curve.estimate.last().unwrap() > a.curve.estimate.last().unwrap());
        assert!(b.curve.estimate.windows(2).all(|w| w[0] <= w[1]));
    }
}

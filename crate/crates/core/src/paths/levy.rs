use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{par_fill_rows, AuxTable, BundleMeta, PathBundle, PathRange, TimeGrid};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;

/// Law of the jump sizes of a compound Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum JumpLaw<F> {
    Normal { mean: F, sd: F },
    Constant { size: F },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyKind<F> {
    Brownian,
    Poisson { rate: F },
    CompoundPoisson { rate: F, jumps: JumpLaw<F> },
    BrownianWithDrift { drift: F },
}

/// A Lévy process with `E[exp(i theta Z_t)] = exp(t psi(theta))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyModel<F> {
    pub kind: LevyKind<F>,
}

impl<F: Real> JumpLaw<F> {
    fn char_fn(&self, theta: F) -> Complex<F> {
        match *self {
            JumpLaw::Normal { mean, sd } => {
                Complex::new(-sd * sd * theta * theta * F::half(), mean * theta).exp()
            }
            JumpLaw::Constant { size } => Complex::new(F::zero(), size * theta).exp(),
        }
    }

    fn char_fn_derivative(&self, theta: F) -> Complex<F> {
        match *self {
            JumpLaw::Normal { mean, sd } => self.char_fn(theta) * Complex::new(-sd * sd * theta, mean),
            JumpLaw::Constant { size } => self.char_fn(theta) * Complex::new(F::zero(), size),
        }
    }

    pub(crate) fn sample(&self, rng: &mut PathRng) -> F {
        match *self {
            JumpLaw::Normal { mean, sd } => mean + sd * F::lit(rng.normal()),
            JumpLaw::Constant { size } => size,
        }
    }
}

impl<F: Real> LevyModel<F> {
    pub fn new(kind: LevyKind<F>) -> Result<Self> {
        match kind {
            LevyKind::Poisson { rate } | LevyKind::CompoundPoisson { rate, .. } => {
                ensure!(rate > F::zero() && rate.is_finite(), "jump rate must be positive, got {rate}");
            }
            LevyKind::Brownian | LevyKind::BrownianWithDrift { .. } => {}
        }
        if let LevyKind::CompoundPoisson { jumps: JumpLaw::Normal { sd, .. }, .. } = kind {
            ensure!(sd >= F::zero(), "jump standard deviation must be non-negative");
        }
        Ok(Self { kind })
    }

    pub fn brownian() -> Self {
        Self { kind: LevyKind::Brownian }
    }

    pub fn poisson(rate: F) -> Result<Self> {
        Self::new(LevyKind::Poisson { rate })
    }

    /// Characteristic exponent `psi(theta)`.
    pub fn exponent(&self, theta: F) -> Complex<F> {
        let i = Complex::new(F::zero(), F::one());
        match self.kind {
            LevyKind::Brownian => Complex::from(-theta * theta * F::half()),
            LevyKind::BrownianWithDrift { drift } => Complex::new(-theta * theta * F::half(), drift * theta),
            LevyKind::Poisson { rate } => ((i * theta).exp() - F::one()) * rate,
            LevyKind::CompoundPoisson { rate, jumps } => (jumps.char_fn(theta) - F::one()) * rate,
        }
    }

    /// `d psi / d theta`.
    pub fn exponent_derivative(&self, theta: F) -> Complex<F> {
        let i = Complex::new(F::zero(), F::one());
        match self.kind {
            LevyKind::Brownian => Complex::from(-theta),
            LevyKind::BrownianWithDrift { drift } => Complex::new(-theta, drift),
            LevyKind::Poisson { rate } => i * (i * theta).exp() * rate,
            LevyKind::CompoundPoisson { rate, jumps } => jumps.char_fn_derivative(theta) * rate,
        }
    }

    pub(crate) fn has_diffusion(&self) -> bool {
        matches!(self.kind, LevyKind::Brownian | LevyKind::BrownianWithDrift { .. })
    }

    pub(crate) fn jump_rate(&self) -> Option<F> {
        match self.kind {
            LevyKind::Poisson { rate } | LevyKind::CompoundPoisson { rate, .. } => Some(rate),
            _ => None,
        }
    }
}

/// Simulates the model on a grid; jump parts carry exact epochs and sizes.
pub fn simulate_levy<F: Real>(
    model: &LevyModel<F>,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PathBundle<F>> {
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let pts = grid.points();
    let horizon = grid.horizon();
    let drift = match model.kind {
        LevyKind::BrownianWithDrift { drift } => drift,
        _ => F::zero(),
    };
    let (values, jumps) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| {
        let mut rng = PathRng::new(seed, Domain::Levy, id);
        let mut times = Vec::new();
        let mut sizes = Vec::new();
        if let Some(rate) = model.jump_rate() {
            let mut t = F::zero();
            loop {
                t += F::lit(rng.exp1()) / rate;
                if t > horizon {
                    break;
                }
                times.push(t);
                sizes.push(match model.kind {
                    LevyKind::CompoundPoisson { jumps, .. } => jumps.sample(&mut rng),
                    _ => F::one(),
                });
            }
        }
        let mut cont = F::zero();
        let mut k = 0usize;
        let mut jump_sum = F::zero();
        row[0] = F::zero();
        for (i, w) in pts.windows(2).enumerate() {
            if model.has_diffusion() {
                let h = w[1] - w[0];
                cont += drift * h + h.sqrt() * F::lit(rng.normal());
            }
            while k < times.len() && times[k] <= w[1] {
                jump_sum += sizes[k];
                k += 1;
            }
            row[i + 1] = cont + jump_sum;
        }
        (times, sizes)
    });
    let (times, sizes): (Vec<_>, Vec<_>) = jumps.into_iter().unzip();
    let bundle = PathBundle::new(grid.clone(), values, AuxTable::empty(), BundleMeta { seed, first_path: range.start, ..Default::default() })?;
    if model.jump_rate().is_some() {
        bundle.with_jumps(times, Some(sizes))
    } else {
        Ok(bundle)
    }
}

//! Conditional density processes, information drifts and compensators for
//! initial enlargements by a terminal value, a jump count, the `n`-th jump
//! time and a first hitting time.
//!
//! Each revealed variable `L` yields a decomposition `X = M - A` where `M` is
//! the base martingale and `A` the compensator in the enlarged filtration.
//! The `*_compensator` functions evaluate `A` cumulatively along one path at
//! the grid points, ready for [`crate::verify::martingale_increment_test`].

use crate::error::{ensure, Result};
use crate::paths::{
    make_grid, par_fill_rows, AuxTable, BundleMeta, PathBundle, PathRange,
    PathView, Refinement, TimeGrid, DEFAULT_DRIFT_CLIP,
};
use crate::rng::{Domain, PathRng};
use crate::scalar::Real;
use crate::special::{cumulative_trapezoid, erlang_survival, gaussian_density, ln_factorial, normal_cdf};

// ---------------------------------------------------------------------------
// Brownian motion enlarged by its terminal value

/// Density process of `B_T` given `F_t`, relative to the law of `B_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalDensityBB<F> {
    pub horizon: F,
    pub x: F,
}

impl<F: Real> ConditionalDensityBB<F> {
    pub fn q(&self, t: F, b: F) -> Result<F> {
        bb_density_q(t, b, self.x, self.horizon)
    }
}

/// `p_{T-t}(x - b) / p_T(x)` with `p_v` the centered normal density of variance `v`.
pub fn bb_density_q<F: Real>(t: F, b: F, x: F, horizon: F) -> Result<F> {
    ensure!(t >= F::zero() && t < horizon, "need 0 <= t < T, got t={t}, T={horizon}");
    Ok(gaussian_density(x - b, horizon - t) / gaussian_density(x, horizon))
}

/// Information drift `(x - b) / (T - t)` of the Brownian bridge.
pub fn bb_drift<F: Real>(t: F, b: F, x: F, horizon: F) -> Result<F> {
    ensure!(t >= F::zero() && t < horizon, "need 0 <= t < T, got t={t}, T={horizon}");
    Ok((x - b) / (horizon - t))
}

/// `A_t = int_0^t (L - B_u) / (T - u) du` by the trapezoid rule, held
/// constant from the last node before `T`.
pub fn bridge_compensator<F: Real>(path: &PathView<'_, F>, revealed: F, horizon: F) -> Vec<F> {
    let pts = path.grid.points();
    let live = pts.partition_point(|&t| t < horizon);
    let integrand: Vec<F> = (0..live).map(|i| (revealed - path.values[i]) / (horizon - pts[i])).collect();
    let mut a = cumulative_trapezoid(&pts[..live], &integrand);
    let held = *a.last().expect("grid starts at 0");
    a.resize(pts.len(), held);
    a
}

// ---------------------------------------------------------------------------
// Diffusions enlarged by their terminal value

/// `sigma(y)^2 d/dy log pi(T - t, y, x)` by a central difference of step `fd_step`.
pub fn diffusion_info_drift<F, P, S>(
    transition_density: P,
    t: F,
    y: F,
    x: F,
    horizon: F,
    sigma: S,
    fd_step: F,
) -> Result<F>
where
    F: Real,
    P: Fn(F, F, F) -> F,
    S: Fn(F) -> F,
{
    ensure!(t >= F::zero() && t < horizon, "need 0 <= t < T, got t={t}, T={horizon}");
    ensure!(fd_step > F::zero(), "fd_step must be positive");
    let v = horizon - t;
    let up = transition_density(v, y + fd_step, x);
    let down = transition_density(v, y - fd_step, x);
    if !(up > F::zero() && down > F::zero()) {
        return Err(crate::error::Error::Domain(format!(
            "transition density not positive near y={y} (values {down}, {up})"
        )));
    }
    let vol = sigma(y);
    Ok(vol * vol * (up.ln() - down.ln()) / (F::two() * fd_step))
}

/// Finite-difference step `1e-4 (1 + |y|)`.
pub fn default_fd_step<F: Real>(y: F) -> F {
    F::lit(1e-4) * (F::one() + y.abs())
}

/// Transition density of standard Brownian motion over time `v`.
pub fn brownian_kernel<F: Real>(v: F, y: F, x: F) -> F {
    gaussian_density(x - y, v)
}

/// Transition density of `dY = -a Y dt + dB` over time `v`.
pub fn ou_kernel<F: Real>(mean_reversion: F) -> impl Fn(F, F, F) -> F + Copy {
    move |v: F, y: F, x: F| {
        let decay = (-mean_reversion * v).exp();
        let var = (F::one() - decay * decay) / (F::two() * mean_reversion);
        gaussian_density(x - y * decay, var)
    }
}

// ---------------------------------------------------------------------------
// Poisson process enlarged by its terminal count (horizon 1)

/// Density process of `N_1` given `F_t` relative to the Poisson(rate) law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonTerminalDensity<F> {
    pub rate: F,
}

impl<F: Real> PoissonTerminalDensity<F> {
    pub fn q(&self, t: F, k: u64, count: u64) -> Result<F> {
        poisson_density_q(t, k, count, self.rate)
    }
}

/// `e^{rate t} rate^{-N_t} (1-t)^{k-N_t} k! / (k-N_t)!`, and 0 when `k < N_t`.
pub fn poisson_density_q<F: Real>(t: F, k: u64, count: u64, rate: F) -> Result<F> {
    ensure!(t >= F::zero() && t < F::one(), "need 0 <= t < 1, got {t}");
    ensure!(rate > F::zero(), "rate must be positive");
    if k < count {
        return Ok(F::zero());
    }
    let gap = k - count;
    let log_q = rate * t - F::lit(count as f64) * rate.ln() + F::lit(gap as f64) * (F::one() - t).ln()
        + ln_factorial::<F>(k)
        - ln_factorial::<F>(gap);
    Ok(log_q.exp())
}

/// Intensity `(k - N_{t-}) / (1 - t)` of the count once `N_1 = k` is revealed.
pub fn poisson_bridge_intensity<F: Real>(t: F, k: u64, count: u64) -> Result<F> {
    ensure!(k >= count, "terminal count {k} below current count {count}");
    ensure!(t >= F::zero() && t < F::one(), "need 0 <= t < 1, got {t}");
    Ok(F::lit((k - count) as f64) / (F::one() - t))
}

/// Integrates a function of the current count exactly between jumps:
/// `piece(k, a, b)` is the integral over `[a, b]` while `k` jumps have occurred.
fn integrate_between_jumps<F: Real>(jumps: &[F], times: &[F], piece: impl Fn(usize, F, F) -> F) -> Vec<F> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = F::zero();
    let mut k = 0usize;
    let mut prev = F::zero();
    for &t in times {
        let mut a = prev;
        while k < jumps.len() && jumps[k] <= t {
            let b = jumps[k];
            if b > a {
                acc += piece(k, a, b);
            }
            a = b;
            k += 1;
        }
        if t > a {
            acc += piece(k, a, t);
        }
        out.push(acc);
        prev = t;
    }
    out
}

/// `int_0^t (L - N_u) / (1 - u) du` integrated exactly over the constant
/// stretches of the count.
pub fn poisson_bridge_compensator<F: Real>(path: &PathView<'_, F>, revealed: F) -> Vec<F> {
    let jumps = path.jump_times.unwrap_or(&[]);
    integrate_between_jumps(jumps, path.grid.points(), |k, a, b| {
        let coef = revealed - F::from_count(k);
        if coef == F::zero() {
            F::zero()
        } else {
            coef * ((F::one() - a) / (F::one() - b)).ln()
        }
    })
}

// ---------------------------------------------------------------------------
// Poisson process enlarged by its n-th jump time

/// `P{T_n > x | F_t}`.
///
/// When `N_t >= n` the jump time is already known and the answer is the
/// indicator `N_x < n`, so `count_at_x` must be given for `x < t`.
pub fn nth_jump_tail<F: Real>(t: F, x: F, count: u64, count_at_x: Option<u64>, n: u64, rate: F) -> Result<F> {
    ensure!(n >= 1, "jump index must be at least 1");
    ensure!(x >= F::zero(), "query time must be non-negative");
    if count >= n {
        if x >= t {
            return Ok(F::zero());
        }
        let nx = count_at_x.ok_or_else(|| crate::error::invalid("count at x required once T_n <= t"))?;
        return Ok(if nx < n { F::one() } else { F::zero() });
    }
    Ok(erlang_survival(n - count, rate, (x - t).max(F::zero())))
}

/// Compensator rate of the count at `u` once `T_n` is revealed, or a unit-jump
/// flag at `u = T_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NthJumpIncrement<F> {
    pub rate: Option<F>,
    pub unit_jump: bool,
}

/// Rate `(n - N_u - 1)/(T_n - u)` before `T_n`, `rate` after it; the jump at
/// `T_n` itself is predictable and flagged instead.
pub fn nth_jump_compensator_increment<F: Real>(u: F, count: u64, n: u64, nth_time: F, rate: F) -> Result<NthJumpIncrement<F>> {
    if u == nth_time {
        return Ok(NthJumpIncrement { rate: None, unit_jump: true });
    }
    Ok(NthJumpIncrement { rate: Some(nth_jump_intensity(u, count, n, nth_time, rate)?), unit_jump: false })
}

/// Rate part of [`nth_jump_compensator_increment`]; errors at `u = T_n`.
pub fn nth_jump_intensity<F: Real>(u: F, count: u64, n: u64, nth_time: F, rate: F) -> Result<F> {
    ensure!(u != nth_time, "the compensator has a unit jump at u = T_n, not a rate");
    if u > nth_time {
        return Ok(rate);
    }
    ensure!(count < n, "count {count} reached n={n} before T_n");
    Ok(F::lit((n - count - 1) as f64) / (nth_time - u))
}

/// `rate (t - T_n ^ t) + int_0^{T_n ^ t} (n - N_u - 1)/(T_n - u) du + 1{T_n <= t}`.
pub fn nth_jump_compensator<F: Real>(path: &PathView<'_, F>, nth_time: F, n: usize, rate: F) -> Vec<F> {
    let jumps = path.jump_times.unwrap_or(&[]);
    let pts = path.grid.points();
    let integral = integrate_between_jumps(jumps, pts, |k, a, b| {
        let mut total = F::zero();
        let before_end = b.min(nth_time);
        if before_end > a && k + 1 < n {
            total += F::from_count(n - 1 - k) * ((nth_time - a) / (nth_time - before_end)).ln();
        }
        let after_start = a.max(nth_time);
        if b > after_start {
            total += rate * (b - after_start);
        }
        total
    });
    integral
        .into_iter()
        .zip(pts)
        .map(|(a, &t)| if nth_time <= t { a + F::one() } else { a })
        .collect()
}

// ---------------------------------------------------------------------------
// Brownian motion enlarged by its first hitting time of -1

/// `P{tau <= s | F_t}` for `tau` the first hitting time of -1.
///
/// On `{tau > t}` (`alive`) this is `2 Phi(-(1 + b)/sqrt(s - t))`; after
/// absorption the answer is 1 for every `s >= tau`.
pub fn hitting_cdf<F: Real>(t: F, b: F, s: F, alive: bool) -> F {
    if !alive || b <= -F::one() {
        return F::one();
    }
    if s <= t {
        return F::zero();
    }
    F::two() * normal_cdf(-(F::one() + b) / (s - t).sqrt())
}

/// Drift `1/(1 + b) - (1 + b)/(tau - t)` of Brownian motion once its hitting
/// time of -1 is revealed.
pub fn hitting_alpha<F: Real>(t: F, b: F, tau: F) -> Result<F> {
    ensure!(b > -F::one(), "state {b} at or below the barrier -1");
    ensure!(t < tau, "need t < tau, got t={t}, tau={tau}");
    let gap = F::one() + b;
    Ok(F::one() / gap - gap / (tau - t))
}

/// `int_0^{t ^ tau} hitting_alpha ds` by the trapezoid rule on the grid.
pub fn hitting_compensator<F: Real>(path: &PathView<'_, F>, tau: F) -> Vec<F> {
    let pts = path.grid.points();
    let live = pts
        .iter()
        .zip(path.values)
        .take_while(|(&t, &b)| t < tau && b > -F::one())
        .count();
    let integrand: Vec<F> = (0..live)
        .map(|i| hitting_alpha(pts[i], path.values[i], tau).expect("live node"))
        .collect();
    let mut a = cumulative_trapezoid(&pts[..live.max(1)], &integrand[..live.max(1).min(integrand.len())]);
    let held = *a.last().unwrap_or(&F::zero());
    a.resize(pts.len(), held);
    a
}

/// Time stepping for Brownian motion with its hitting time of -1 revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BridgeScheme {
    /// Plain Euler-Maruyama with drift clipping and absorption at -1.
    Explicit,
    /// Euler step with both drift terms taken at the new state. For the gap
    /// `y = 1 + B` this is the positive root of
    /// `(1 + h/r) y^2 - (y_prev + dW) y - h = 0`, `r` the time left after the
    /// step, so the barrier is never crossed before `tau`.
    #[default]
    DriftImplicit,
}

/// One step of the gap `1 + B` over `h`, `remaining` being `tau` minus the
/// new time. Returns a value `<= 0` only for the explicit scheme.
#[inline]
pub fn hitting_bridge_step<F: Real>(gap: F, h: F, remaining: F, dw: F, scheme: BridgeScheme, clip: F) -> F {
    match scheme {
        BridgeScheme::Explicit => {
            let a = F::one() / gap - gap / (remaining + h);
            gap + a.max(-clip).min(clip) * h + dw
        }
        BridgeScheme::DriftImplicit => {
            let k = F::one() + h / remaining;
            let a = gap + dw;
            let root = (a * a + F::lit(4.0) * k * h).sqrt();
            // the second form avoids cancellation when a < 0
            if a >= F::zero() {
                (a + root) / (k + k)
            } else {
                (h + h) / (root - a)
            }
        }
    }
}

/// Integrates `B` from `b0` at `pts[0]` along `pts` until the last node
/// before `tau`, holding that value afterwards. Returns `true` if the path
/// reached -1 early (explicit scheme only); it is then held at -1.
pub(crate) fn fill_hitting_bridge<F: Real>(
    row: &mut [F],
    pts: &[F],
    tau: F,
    b0: F,
    rng: &mut PathRng,
    scheme: BridgeScheme,
) -> bool {
    let clip = F::lit(DEFAULT_DRIFT_CLIP);
    let mut gap = F::one() + b0;
    row[0] = b0;
    let mut filled = 0;
    let mut absorbed = false;
    while filled + 1 < pts.len() && pts[filled + 1] < tau {
        let h = pts[filled + 1] - pts[filled];
        let dw = F::lit(rng.normal()) * h.sqrt();
        gap = hitting_bridge_step(gap, h, tau - pts[filled + 1], dw, scheme, clip);
        filled += 1;
        if gap <= F::zero() {
            gap = F::zero();
            absorbed = true;
        }
        row[filled] = gap - F::one();
        if absorbed {
            break;
        }
    }
    let held = row[filled];
    row[filled + 1..].iter_mut().for_each(|v| *v = held);
    absorbed
}

/// Paths of `dB = d beta + hitting_alpha(t, B, tau) dt` from 0, stopped at the
/// last node before `tau`, using [`BridgeScheme::DriftImplicit`].
///
/// The grid should end at `tau` and be refined toward it, see
/// [`hitting_bridge_grid`]. Aux `tau` is set.
pub fn enlarged_brownian_given_tau<F: Real>(
    tau: F,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
) -> Result<PathBundle<F>> {
    enlarged_brownian_given_tau_with(tau, grid, paths, seed, BridgeScheme::DriftImplicit)
}

pub fn enlarged_brownian_given_tau_with<F: Real>(
    tau: F,
    grid: &TimeGrid<F>,
    paths: impl Into<PathRange>,
    seed: u64,
    scheme: BridgeScheme,
) -> Result<PathBundle<F>> {
    ensure!(tau > F::zero() && tau.is_finite(), "tau must be positive and finite, got {tau}");
    let range = paths.into();
    ensure!(range.count >= 1, "n_paths must be at least 1");
    let pts = grid.points();
    let (values, absorbed) = par_fill_rows(range, grid.len(), |id, row: &mut [F]| {
        let mut rng = PathRng::new(seed, Domain::Euler, id);
        fill_hitting_bridge(row, pts, tau, F::zero(), &mut rng, scheme)
    });
    let meta = BundleMeta {
        seed,
        first_path: range.start,
        absorbed_paths: absorbed.iter().filter(|&&a| a).count() as u64,
        ..Default::default()
    };
    let aux = AuxTable::single("tau", vec![tau; range.count]);
    PathBundle::new(grid.clone(), values, aux, meta)
}

/// Largest gap left between the last live node and a revealed hitting time.
pub const HITTING_LAST_STEP: f64 = 1.0e-6;

/// Graded grid on `[0, tau]` (each step a fixed fraction of the time left)
/// whose last interior node sits `min(tau / n^2, HITTING_LAST_STEP)` before
/// `tau` (but never closer than `1e4` ulps of `tau`). `extra` times are merged
/// in, except those falling after that node:
/// a node squeezed in just before `tau` would be a step that is large relative
/// to the remaining time, which is exactly what the grading avoids.
pub fn hitting_bridge_grid<F: Real>(tau: F, n_steps: usize, extra: &[F]) -> Result<TimeGrid<F>> {
    ensure!(tau > F::zero() && tau.is_finite(), "hitting time must be positive and finite, got {tau}");
    let n = F::from_count(n_steps.max(2));
    // very late hitting times need a relative floor to stay resolvable
    let floor = tau * F::epsilon() * F::lit(1e4);
    let remainder = (tau / (n * n)).min(F::lit(HITTING_LAST_STEP)).max(floor);
    let grid = make_grid(tau, n_steps, Refinement::graded_with_remainder(tau, n_steps, remainder))?;
    let last_live = grid.points()[grid.len() - 2];
    let keep: Vec<F> = extra.iter().copied().filter(|&t| t > F::zero() && t < last_live).collect();
    Ok(if keep.is_empty() { grid } else { grid.merged(&keep) })
}

//! Closed-form distribution functions, quadrature and compensated summation.

use crate::scalar::Real;

/// Standard normal density.
pub fn normal_pdf<F: Real>(x: F) -> F {
    (-(x * x) * F::half()).exp() / (F::two() * F::PI()).sqrt()
}

/// Standard normal distribution function, accurate in both tails.
pub fn normal_cdf<F: Real>(x: F) -> F {
    F::lit(0.5 * libm::erfc(-x.as_f64() / std::f64::consts::SQRT_2))
}

/// Centered Gaussian density with variance `var`.
pub fn gaussian_density<F: Real>(x: F, var: F) -> F {
    (-(x * x) / (F::two() * var)).exp() / (F::two() * F::PI() * var).sqrt()
}

/// `ln(k!)` by direct summation; exact enough for the small counts used here.
pub fn ln_factorial<F: Real>(k: u64) -> F {
    (2..=k).map(|i| F::lit(i as f64).ln()).fold(F::zero(), |a, b| a + b)
}

/// Poisson(mean) probability mass at `k`.
pub fn poisson_pmf<F: Real>(k: u64, mean: F) -> F {
    if mean == F::zero() {
        return if k == 0 { F::one() } else { F::zero() };
    }
    (F::lit(k as f64) * mean.ln() - mean - ln_factorial::<F>(k)).exp()
}

/// `P{Gamma(shape, rate) > x}` for integer shape (Erlang survival).
pub fn erlang_survival<F: Real>(shape: u64, rate: F, x: F) -> F {
    if x <= F::zero() {
        return F::one();
    }
    let lx = rate * x;
    let mut term = (-lx).exp();
    let mut total = F::zero();
    for k in 0..shape {
        if k > 0 {
            term = term * lx / F::lit(k as f64);
        }
        total += term;
    }
    total.min(F::one())
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson<F: Real>(f: impl Fn(F) -> F, a: F, b: F, n: usize) -> F {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / F::from_count(n);
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { F::lit(4.0) } else { F::two() };
        acc += w * f(a + h * F::from_count(i));
    }
    acc * h / F::lit(3.0)
}

/// Running trapezoid integral of samples `f` at increasing `times`.
pub fn cumulative_trapezoid<F: Real>(times: &[F], f: &[F]) -> Vec<F> {
    debug_assert_eq!(times.len(), f.len());
    let mut out = Vec::with_capacity(times.len());
    let mut acc = F::zero();
    out.push(acc);
    for i in 1..times.len() {
        acc += (times[i] - times[i - 1]) * (f[i] + f[i - 1]) * F::half();
        out.push(acc);
    }
    out
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<F> {
    sum: F,
    carry: F,
}

impl<F: Real> CompensatedSum<F> {
    pub fn new() -> Self {
        Self { sum: F::zero(), carry: F::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: F) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> F {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_points() {
        assert_abs_diff_eq!(normal_cdf(0.0_f64), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(2.0 * normal_cdf(-1.0_f64), 0.317_310_507_862_914_1, epsilon = 1e-14);
        assert_abs_diff_eq!(normal_cdf(-1.0_f32), 0.158_655_26, epsilon = 1e-6);
    }

    #[test]
    fn erlang_survival_matches_quadrature() {
        // shape 3, rate 2: integrate the density on [x, 40]
        let dens = |u: f64| 2.0 * (-2.0 * u).exp() * (2.0 * u).powi(2) / 2.0;
        for &x in &[0.1, 0.7, 1.5, 3.0] {
            let q = simpson(dens, x, 40.0, 20_000);
            assert_abs_diff_eq!(erlang_survival(3, 2.0, x), q, epsilon = 1e-10);
        }
        assert_eq!(erlang_survival(3, 2.0, -1.0), 1.0);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let total: f64 = (0..60).map(|k| poisson_pmf(k, 3.5)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(poisson_pmf(0, 2.0), (-2.0_f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1.0e16_f64);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1.0e16);
        assert_eq!(s.value(), 1000.0);
    }
}

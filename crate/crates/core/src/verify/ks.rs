use crate::error::{ensure, Result};
use crate::scalar::Real;

use super::{ReportContext, TestReport};

/// One-sample Kolmogorov-Smirnov test against `cdf` at significance `level`,
/// using the asymptotic critical value `sqrt(-ln(level / 2) / 2) / sqrt(n)`.
///
/// Infinite samples are allowed (censored observations): they count in `n`
/// but the supremum runs over the finite sample points only. The report's `stderr` is `1 / sqrt(n)`, the scale
/// of the statistic.
pub fn ks_test<F: Real>(name: impl Into<String>, samples: &[F], cdf: impl Fn(F) -> F, level: f64, ctx: &ReportContext) -> Result<TestReport> {
    ensure!(!samples.is_empty(), "KS test needs at least one sample");
    ensure!(level > 0.0 && level < 1.0, "level must lie in (0, 1), got {level}");
    ensure!(samples.iter().all(|x| !x.is_nan()), "KS samples must not be NaN");
    let mut xs: Vec<f64> = samples.iter().map(|x| x.as_f64()).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() {
            continue;
        }
        let f = cdf(F::lit(x)).as_f64();
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let critical = (-(level / 2.0).ln() / 2.0).sqrt() / n.sqrt();
    Ok(TestReport::one_sided(name, d, 1.0 / n.sqrt(), critical, xs.len() as u64, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::sample_hitting_time_unit;
    use crate::rng::{Domain, PathRng};
    use crate::special::normal_cdf;

    fn hitting_cdf(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            2.0 * normal_cdf(-1.0 / t.sqrt())
        }
    }

    #[test]
    fn statistic_by_hand() {
        // samples .1 .5 .9 vs uniform: largest gaps 1/3 - .1 and .9 - 2/3
        let r = ks_test("u", &[0.9, 0.1, 0.5], |x: f64| x.clamp(0.0, 1.0), 0.01, &ReportContext::default()).unwrap();
        assert!((r.statistic - (0.9 - 2.0 / 3.0)).abs() < 1e-12);
        assert!((r.threshold - (-(0.005f64).ln() / 2.0).sqrt() / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hitting_sampler_and_controls() {
        let ctx = ReportContext::default();
        let tau: Vec<f64> = sample_hitting_time_unit(100_000, 21).unwrap();
        assert!(ks_test("tau", &tau, hitting_cdf, 0.01, &ctx).unwrap().pass);
        let inverse: Vec<f64> = (0..10_000u64).map(|i| PathRng::new(2, Domain::Pilot, i).uniform()).collect();
        assert!(ks_test("u", &inverse, |x: f64| x.clamp(0.0, 1.0), 0.01, &ctx).unwrap().pass);
        assert!(!ks_test("u vs normal", &inverse, normal_cdf, 0.01, &ctx).unwrap().pass);
        // censoring at 1 keeps the statistic
        let censored: Vec<f64> = tau.iter().map(|&t| if t <= 1.0 { t } else { f64::INFINITY }).collect();
        assert!(ks_test("tau<=1", &censored, hitting_cdf, 0.01, &ctx).unwrap().pass);
    }
}

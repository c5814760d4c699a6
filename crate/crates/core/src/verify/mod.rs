//! Monte Carlo tests of martingale, covariance, pinning, distributional and
//! characteristic-function identities.
//!
//! Estimates are accumulated in `f64` with mergeable moment accumulators, so
//! a run split into chunks of paths yields the same reports as a single pass
//! (up to floating-point association, which is fixed by the chunk order).

mod cf;
mod ks;
mod martingale;
mod moments;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use cf::{cf_identity_test, CfIdentityTest};
pub use ks::ks_test;
pub use martingale::{martingale_increment_test, no_compensator, GFunctional, MartingaleTest, ZFunctional};
pub use moments::{
    covariance_test, terminal_pinning_test, CovarianceTest, MeanTest, Moments, PinningTest,
};

/// Default z threshold.
pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// Outcome of one statistical check.
///
/// For two-sided tests `statistic = estimate - target`, `z = statistic /
/// stderr` and `pass` means `|z| <= threshold`. One-sided tests compare the
/// statistic itself with the threshold. A negative control is a check that
/// is expected to fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub stderr: f64,
    pub z: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n_paths: u64,
    pub seed: u64,
    pub grid_summary: String,
    pub estimate: f64,
    pub target: f64,
    pub one_sided: bool,
    pub negative_control: bool,
}

/// Run metadata stamped onto every report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportContext {
    pub seed: u64,
    pub grid_summary: String,
    pub negative_control: bool,
}

impl ReportContext {
    pub fn new(seed: u64, grid_summary: impl Into<String>) -> Self {
        Self { seed, grid_summary: grid_summary.into(), negative_control: false }
    }

    pub fn negative(mut self) -> Self {
        self.negative_control = true;
        self
    }
}

fn z_score(statistic: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        statistic / stderr
    } else if statistic == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(statistic)
    }
}

impl TestReport {
    /// Two-sided report: `|estimate - target| <= threshold * stderr`.
    pub fn two_sided(name: impl Into<String>, estimate: f64, target: f64, stderr: f64, threshold: f64, n_paths: u64, ctx: &ReportContext) -> Self {
        let statistic = estimate - target;
        let z = z_score(statistic, stderr);
        Self {
            name: name.into(),
            statistic,
            stderr,
            z,
            threshold,
            pass: z.abs() <= threshold,
            n_paths,
            seed: ctx.seed,
            grid_summary: ctx.grid_summary.clone(),
            estimate,
            target,
            one_sided: false,
            negative_control: ctx.negative_control,
        }
    }

    /// One-sided report: `statistic <= threshold`.
    pub fn one_sided(name: impl Into<String>, statistic: f64, stderr: f64, threshold: f64, n_paths: u64, ctx: &ReportContext) -> Self {
        Self {
            name: name.into(),
            statistic,
            stderr,
            z: z_score(statistic, stderr),
            threshold,
            pass: statistic <= threshold,
            n_paths,
            seed: ctx.seed,
            grid_summary: ctx.grid_summary.clone(),
            estimate: statistic,
            target: threshold,
            one_sided: true,
            negative_control: ctx.negative_control,
        }
    }

    /// Whether the outcome is the expected one: a pass, or a failure for a
    /// negative control.
    pub fn as_expected(&self) -> bool {
        self.pass != self.negative_control
    }

    pub fn verdict_line(&self) -> String {
        let verdict = match (self.as_expected(), self.negative_control) {
            (true, false) => "PASS",
            (true, true) => "PASS (control failed as expected)",
            (false, false) => "FAIL",
            (false, true) => "FAIL (control passed)",
        };
        let test = if self.one_sided {
            format!("statistic={:.6} bound={}", self.statistic, self.threshold)
        } else {
            format!("estimate={:.6} target={:.6} z={:.2} |z|<={}", self.estimate, self.target, self.z, self.threshold)
        };
        format!("{verdict} {}: {test} n={}", self.name, self.n_paths)
    }
}

/// Reports as a JSON array.
pub fn reports_to_json(reports: &[TestReport]) -> Result<String> {
    serde_json::to_string_pretty(reports).map_err(|e| invalid(format!("serializing reports: {e}")))
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    statistic: f64,
    stderr: f64,
    z: f64,
    threshold: f64,
    pass: bool,
}

/// Writes one CSV row per report (name, statistic, stderr, z, threshold, pass).
pub fn write_reports_csv<W: Write>(out: W, reports: &[TestReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow { name: &r.name, statistic: r.statistic, stderr: r.stderr, z: r.z, threshold: r.threshold, pass: r.pass })
            .map_err(|e| invalid(format!("writing csv: {e}")))?;
    }
    w.flush().map_err(|e| invalid(format!("writing csv: {e}")))
}

pub fn write_reports_csv_file(path: &Path, reports: &[TestReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| invalid(format!("creating {}: {e}", path.display())))?;
    write_reports_csv(file, reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_invariants() {
        let ctx = ReportContext::new(7, "grid");
        let r = TestReport::two_sided("a", 1.1, 1.0, 0.05, 4.0, 100, &ctx);
        assert!((r.z - 2.0).abs() < 1e-12 && r.pass && r.as_expected());
        let r = TestReport::two_sided("b", 0.0, 0.0, 0.0, 4.0, 100, &ctx);
        assert_eq!(r.z, 0.0);
        assert!(r.pass);
        let r = TestReport::two_sided("c", 1.0, 0.0, 0.0, 4.0, 100, &ctx.clone().negative());
        assert!(!r.pass && r.as_expected());
        let r = TestReport::one_sided("d", 0.03, 0.001, 0.05, 100, &ctx);
        assert!(r.pass && r.one_sided);
        assert!(r.verdict_line().starts_with("PASS d"));
    }

    #[test]
    fn serializes_json_and_csv() {
        let ctx = ReportContext::new(1, "T=1 steps=4 uniform");
        let reports = vec![
            TestReport::two_sided("x", 0.5, 0.5, 0.1, 4.0, 10, &ctx),
            TestReport::one_sided("y", 0.2, 0.01, 0.1, 10, &ctx),
        ];
        let json = reports_to_json(&reports).unwrap();
        let back: Vec<TestReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reports);
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("name,statistic,stderr,z,threshold,pass"));
        assert!(lines.next().unwrap().starts_with("x,0.0,0.1,0.0,4.0,true"));
        assert!(lines.next().unwrap().ends_with(",false"));
    }
}

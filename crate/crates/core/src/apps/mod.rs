//! Structural default times and the Kyle-Back total-order dynamics with a
//! revealed default time.

mod kyle_back;
mod structural;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

pub use kyle_back::{kyle_back_simulate, kyle_back_simulate_range, DriftVariant, KyleBackConfig, KyleBackOutput, PostDefault};
pub use structural::{structural_default_nested, structural_default_simulate, JumpSpec, StructuralModel, StructuralOutput};

/// Empirical default-time CDF `P{tau <= t}` with CLT bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultCurve {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Half-width `z * stderr`.
    pub band: Vec<f64>,
    pub n: u64,
}

/// Band multiplier used by [`default_prob_curve`].
pub const CURVE_BAND_Z: f64 = 4.0;

/// Estimates `P{tau <= t}` at each of `times`; `+inf` marks no default.
pub fn default_prob_curve<F: Real>(taus: &[F], times: &[F]) -> DefaultCurve {
    let mut sorted: Vec<f64> = taus.iter().map(|t| t.as_f64()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len().max(1) as f64;
    let mut curve = DefaultCurve { times: Vec::new(), estimate: Vec::new(), stderr: Vec::new(), band: Vec::new(), n: taus.len() as u64 };
    for t in times {
        let t = t.as_f64();
        let p = sorted.partition_point(|&x| x <= t) as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        curve.times.push(t);
        curve.estimate.push(p);
        curve.stderr.push(se);
        curve.band.push(CURVE_BAND_Z * se);
    }
    curve
}

impl DefaultCurve {
    /// CSV with columns `t, estimate, band`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| invalid(format!("writing curve csv: {e}"));
        w.write_record(["t", "estimate", "band"]).map_err(err)?;
        for ((t, p), b) in self.times.iter().zip(&self.estimate).zip(&self.band) {
            w.write_record([t.to_string(), p.to_string(), b.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| invalid(format!("writing curve csv: {e}")))
    }
}

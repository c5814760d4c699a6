//! Named experiments with pinned defaults, and the `report.json` they write.

mod config;
mod runs;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::verify::{write_reports_csv_file, TestReport};

pub use config::{Experiment, ExperimentConfig, RefinementKind, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};

/// A CSV table written next to the reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub contents: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<TestReport>,
    pub tables: Vec<Table>,
    /// Wall-clock seconds per experiment; not part of the reports.
    pub timings: Vec<(Experiment, f64)>,
}

impl ExperimentOutput {
    fn new(reports: Vec<TestReport>) -> Self {
        Self { reports, ..Default::default() }
    }

    /// Whether every report came out as expected.
    pub fn all_as_expected(&self) -> bool {
        self.reports.iter().all(TestReport::as_expected)
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub reports: Vec<TestReport>,
    pub wallclock_seconds: f64,
}

fn run_single(experiment: Experiment, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let mut out = match experiment {
        Experiment::BridgeBrownian => runs::bridge_brownian(config),
        Experiment::BridgePoisson => runs::bridge_poisson(config),
        Experiment::NthJump => runs::nth_jump(config),
        Experiment::HittingTime => runs::hitting_time(config),
        Experiment::DiffusionDrift => runs::diffusion_drift(config),
        Experiment::NoisySignal => runs::noisy_signal(config),
        Experiment::ProgBridge => runs::prog_bridge(config),
        Experiment::CfIdentity => runs::cf_identity(config),
        Experiment::StructuralDefault => runs::structural_default(config),
        Experiment::KyleBack => runs::kyle_back(config),
        Experiment::Suite => return Err(invalid("suite is not a single experiment")),
    }?;
    for r in &mut out.reports {
        r.name = format!("{}: {}", experiment.name(), r.name);
    }
    out.timings.push((experiment, start.elapsed().as_secs_f64()));
    Ok(out)
}

/// Runs a resolved config. `suite` runs every experiment of
/// [`Experiment::BATTERY`] at its defaults with the suite's seed and threshold.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let experiment = config.experiment.ok_or_else(|| invalid("config names no experiment"))?;
    if experiment != Experiment::Suite {
        return run_single(experiment, config);
    }
    let mut all = ExperimentOutput::default();
    for e in Experiment::BATTERY {
        let mut sub = ExperimentConfig::defaults(e, config.seed.unwrap_or(1));
        sub.threshold = config.threshold.or(sub.threshold);
        let out = run_single(e, &sub)?;
        all.reports.extend(out.reports);
        all.tables.extend(out.tables);
        all.timings.extend(out.timings);
    }
    Ok(all)
}

/// Writes `report.json`, `reports.csv` and the tables into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &ExperimentOutput, wallclock_seconds: f64) -> Result<()> {
    let io = |e: std::io::Error| invalid(format!("writing to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        reports: out.reports.clone(),
        wallclock_seconds,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| invalid(format!("serializing report: {e}")))?;
    std::fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    write_reports_csv_file(&dir.join("reports.csv"), &out.reports)?;
    for t in &out.tables {
        std::fs::write(dir.join(&t.file_name), &t.contents).map_err(io)?;
    }
    Ok(())
}

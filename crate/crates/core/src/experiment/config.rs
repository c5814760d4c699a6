use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apps::{DriftVariant, PostDefault};
use crate::error::{Error, Result};
use crate::initial_enlargement::BridgeScheme;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FILTLAB_OUTPUT_DIR";
/// Output directory used when neither the config nor the environment names one.
pub const DEFAULT_OUTPUT_DIR: &str = "filtlab-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BridgeBrownian,
    BridgePoisson,
    NthJump,
    HittingTime,
    DiffusionDrift,
    NoisySignal,
    ProgBridge,
    CfIdentity,
    StructuralDefault,
    KyleBack,
    Suite,
}

impl Experiment {
    /// Experiments run by `suite`, in order.
    pub const BATTERY: [Experiment; 10] = [
        Experiment::BridgeBrownian,
        Experiment::BridgePoisson,
        Experiment::NthJump,
        Experiment::HittingTime,
        Experiment::DiffusionDrift,
        Experiment::NoisySignal,
        Experiment::ProgBridge,
        Experiment::CfIdentity,
        Experiment::StructuralDefault,
        Experiment::KyleBack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::BridgeBrownian => "bridge-brownian",
            Experiment::BridgePoisson => "bridge-poisson",
            Experiment::NthJump => "nth-jump",
            Experiment::HittingTime => "hitting-time",
            Experiment::DiffusionDrift => "diffusion-drift",
            Experiment::NoisySignal => "noisy-signal",
            Experiment::ProgBridge => "prog-bridge",
            Experiment::CfIdentity => "cf-identity",
            Experiment::StructuralDefault => "structural-default",
            Experiment::KyleBack => "kyle-back",
            Experiment::Suite => "suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RefinementKind {
    Uniform,
    Geometric,
    Graded,
}

/// Flat experiment configuration. Every field is optional in a config file;
/// [`ExperimentConfig::resolve`] fills the experiment's defaults, and the
/// resolved form is echoed into `report.json` so a run can be repeated
/// exactly from it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub refinement: Option<RefinementKind>,
    /// Grid ratio for geometric or graded refinement (derived from
    /// `n_steps` when absent).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub horizon: Option<f64>,
    pub lambda: Option<f64>,
    pub n: Option<usize>,
    pub ou_rate: Option<f64>,
    pub density_x: Option<f64>,
    pub density_k: Option<u64>,
    pub sigma_switch: Option<Vec<f64>>,
    pub sigma_levels: Option<Vec<f64>>,
    pub checkpoints: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub vol: Option<f64>,
    pub barrier: Option<f64>,
    pub firm_value: Option<f64>,
    pub jump_rate: Option<f64>,
    pub jump_mean: Option<f64>,
    pub jump_sd: Option<f64>,
    pub thetas: Option<Vec<f64>>,
    pub drift_variant: Option<DriftVariant>,
    pub post_default: Option<PostDefault>,
    pub scheme: Option<BridgeScheme>,
    pub pairs: Option<Vec<(f64, f64)>>,
    pub threshold: Option<f64>,
    pub ks_samples: Option<usize>,
    pub output_dir: Option<String>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("invalid value for `{name}`: {msg}"))
}

macro_rules! take {
    ($dst:ident, $src:ident, $($f:ident),+) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

impl ExperimentConfig {
    /// Parses a flat config, or the `config` object of a previous `report.json`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config is not valid JSON: {e}")))?;
        let inner = match value.get("config") {
            Some(c) if value.get("reports").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| Error::InvalidArgument(format!("config does not parse: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &ExperimentConfig) -> Self {
        take!(self, other, experiment, seed, n_paths, n_steps, refinement, ratio, horizon, lambda, n, ou_rate);
        take!(self, other, density_x, density_k, sigma_switch, sigma_levels, checkpoints, mu, vol, barrier);
        take!(self, other, firm_value, jump_rate, jump_mean, jump_sd, thetas, drift_variant, post_default);
        take!(self, other, scheme, pairs, threshold, ks_samples, output_dir);
        self
    }

    /// Pinned defaults of one experiment with the given seed.
    pub fn defaults(experiment: Experiment, seed: u64) -> Self {
        let standard_pairs = vec![(0.25, 0.5), (0.25, 0.75), (0.5, 0.75)];
        let mut c = ExperimentConfig {
            experiment: Some(experiment),
            seed: Some(seed),
            threshold: Some(crate::verify::DEFAULT_THRESHOLD),
            ..Default::default()
        };
        if experiment != Experiment::Suite {
            c.horizon = Some(1.0);
            c.refinement = Some(RefinementKind::Uniform);
        }
        match experiment {
            Experiment::BridgeBrownian => {
                c.n_paths = Some(200_000);
                c.n_steps = Some(512);
                c.pairs = Some(standard_pairs);
                c.density_x = Some(0.5);
            }
            Experiment::BridgePoisson => {
                c.n_paths = Some(200_000);
                c.n_steps = Some(512);
                c.lambda = Some(1.0);
                c.pairs = Some(standard_pairs);
                c.density_k = Some(1);
            }
            Experiment::NthJump => {
                c.n_paths = Some(200_000);
                c.n_steps = Some(512);
                c.lambda = Some(2.0);
                c.n = Some(3);
                c.horizon = Some(2.0);
                c.pairs = Some(vec![(0.5, 1.0), (0.5, 1.5), (1.0, 1.5)]);
            }
            Experiment::HittingTime => {
                c.n_paths = Some(10_000);
                c.n_steps = Some(4096);
                c.refinement = Some(RefinementKind::Graded);
                c.scheme = Some(BridgeScheme::DriftImplicit);
                c.ks_samples = Some(100_000);
            }
            Experiment::DiffusionDrift => {
                c.n_paths = Some(50_000);
                c.n_steps = Some(512);
                c.ou_rate = Some(1.0);
                c.pairs = Some(standard_pairs);
            }
            Experiment::NoisySignal => {
                c.n_paths = Some(200_000);
                c.n_steps = Some(512);
                c.sigma_switch = Some(vec![0.5]);
                c.sigma_levels = Some(vec![1.0, 0.5]);
                c.checkpoints = Some(vec![0.25, 0.5, 0.75]);
            }
            Experiment::ProgBridge => {
                c.n_paths = Some(20_000);
                c.n_steps = Some(4096);
                c.refinement = Some(RefinementKind::Graded);
                c.scheme = Some(BridgeScheme::DriftImplicit);
                c.sigma_switch = Some(vec![0.5]);
                c.sigma_levels = Some(vec![0.8, 0.4]);
                c.checkpoints = Some(vec![0.2, 0.4, 0.6, 0.8]);
                c.pairs = Some(vec![(0.2, 0.6), (0.4, 0.8), (0.6, 0.8), (0.8, 0.8)]);
            }
            Experiment::CfIdentity => {
                c.n_paths = Some(200_000);
                c.n_steps = Some(64);
                c.lambda = Some(1.0);
                c.thetas = Some(vec![0.5, 1.0]);
                c.pairs = Some(vec![(0.25, 0.5)]);
            }
            Experiment::StructuralDefault => {
                c.n_paths = Some(20_000);
                c.n_steps = Some(1 << 14);
                c.mu = Some(0.0);
                c.vol = Some(1.0);
                c.barrier = Some((-1.0f64).exp());
                c.firm_value = Some(1.0);
            }
            Experiment::KyleBack => {
                c.n_paths = Some(20_000);
                c.n_steps = Some(4096);
                c.drift_variant = Some(DriftVariant::G4Consistent);
                c.post_default = Some(PostDefault::Continue);
                c.scheme = Some(BridgeScheme::DriftImplicit);
                c.pairs = Some(vec![(0.25, 0.5), (0.5, 0.75), (0.25, 1.0), (1.0, 1.0)]);
            }
            Experiment::Suite => {}
        }
        c
    }

    /// Defaults of the named experiment overlaid with `self`, validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let experiment = self.experiment.ok_or_else(|| field("experiment", "an experiment name is required"))?;
        let seed = self.seed.unwrap_or(1);
        let mut resolved = Self::defaults(experiment, seed).overlay(self);
        if resolved.output_dir.is_none() {
            resolved.output_dir =
                Some(std::env::var(OUTPUT_DIR_ENV).unwrap_or_else(|_| DEFAULT_OUTPUT_DIR.to_string()));
        }
        resolved.validate()?;
        Ok(resolved)
    }

    /// Checks every parameter against the preconditions of the modules it
    /// feeds; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => Err(field(name, format!("must be positive and finite, got {x}"))),
                _ => Ok(()),
            }
        };
        if let Some(n) = self.n_paths {
            if n < 2 {
                return Err(field("n_paths", format!("must be at least 2, got {n}")));
            }
        }
        if let Some(n) = self.n_steps {
            if n < 2 {
                return Err(field("n_steps", format!("must be at least 2, got {n}")));
            }
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(field("ratio", format!("must lie in (0, 1), got {r}")));
            }
        }
        positive("horizon", self.horizon)?;
        positive("lambda", self.lambda)?;
        positive("ou_rate", self.ou_rate)?;
        positive("vol", self.vol)?;
        positive("barrier", self.barrier)?;
        positive("firm_value", self.firm_value)?;
        positive("threshold", self.threshold)?;
        if let Some(j) = self.jump_rate {
            if !(j >= 0.0 && j.is_finite()) {
                return Err(field("jump_rate", format!("must be >= 0, got {j}")));
            }
        }
        if let Some(sd) = self.jump_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(field("jump_sd", format!("must be >= 0, got {sd}")));
            }
        }
        if self.n == Some(0) {
            return Err(field("n", "jump index must be at least 1"));
        }
        if self.ks_samples.is_some_and(|k| k < 2) {
            return Err(field("ks_samples", "must be at least 2"));
        }
        if let (Some(k), Some(v0)) = (self.barrier, self.firm_value) {
            if k >= v0 {
                return Err(field("barrier", format!("K = {k} must lie below firm_value = {v0}")));
            }
        }
        let horizon = self.horizon.unwrap_or(1.0);
        if let Some(pairs) = &self.pairs {
            if pairs.is_empty() {
                return Err(field("pairs", "at least one pair is required"));
            }
            for &(s, t) in pairs {
                if !(s > 0.0 && s <= t && t <= horizon) {
                    return Err(field("pairs", format!("need 0 < s <= t <= horizon, got ({s}, {t})")));
                }
            }
        }
        if let Some(cp) = &self.checkpoints {
            if cp.is_empty() || cp.iter().any(|&t| !(t > 0.0 && t < horizon)) {
                return Err(field("checkpoints", format!("must be non-empty and inside (0, {horizon})")));
            }
        }
        if let Some(thetas) = &self.thetas {
            if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite()) {
                return Err(field("thetas", "must be a non-empty list of finite values"));
            }
        }
        if let (Some(sw), Some(levels)) = (&self.sigma_switch, &self.sigma_levels) {
            if levels.len() != sw.len() + 1 {
                return Err(field("sigma_levels", format!("need {} levels for {} switch times", sw.len() + 1, sw.len())));
            }
            if levels.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
                return Err(field("sigma_levels", "volatilities must be finite and >= 0"));
            }
            let mut prev = 0.0;
            for &s in sw {
                if !(s > prev && s < horizon) {
                    return Err(field("sigma_switch", format!("switch times must increase inside (0, {horizon})")));
                }
                prev = s;
            }
        }
        self.validate_experiment(horizon)
    }

    fn validate_experiment(&self, horizon: f64) -> Result<()> {
        let strict_pairs = |pairs: &Option<Vec<(f64, f64)>>| -> Result<()> {
            for &(s, t) in pairs.iter().flatten() {
                if !(s < t && t < horizon) {
                    return Err(field("pairs", format!("this experiment needs s < t < horizon, got ({s}, {t})")));
                }
            }
            Ok(())
        };
        match self.experiment {
            Some(Experiment::BridgeBrownian | Experiment::NthJump | Experiment::DiffusionDrift) => strict_pairs(&self.pairs),
            Some(Experiment::BridgePoisson) => {
                if horizon != 1.0 {
                    return Err(field("horizon", "the Poisson bridge is defined on [0, 1]"));
                }
                strict_pairs(&self.pairs)
            }
            Some(Experiment::CfIdentity) => strict_pairs(&self.pairs),
            Some(Experiment::KyleBack) => {
                if horizon != 1.0 {
                    return Err(field("horizon", "Kyle-Back has maturity 1"));
                }
                let n = self.n_steps.unwrap_or(2) as f64;
                for &(s, t) in self.pairs.iter().flatten() {
                    if [s, t].iter().any(|&x| ((x * n).round() - x * n).abs() > 1e-9) {
                        return Err(field("pairs", format!("({s}, {t}) must lie on the uniform grid of {n} steps")));
                    }
                }
                Ok(())
            }
            Some(Experiment::Suite) => {
                // the suite pins every model and budget; only these may vary
                let free = ExperimentConfig {
                    experiment: self.experiment,
                    seed: self.seed,
                    threshold: self.threshold,
                    output_dir: self.output_dir.clone(),
                    ..Default::default()
                };
                let extra = serde_json::to_value(self)
                    .ok()
                    .zip(serde_json::to_value(&free).ok())
                    .and_then(|(a, b)| {
                        let (a, b) = (a.as_object()?.clone(), b.as_object()?.clone());
                        a.into_iter().find(|(k, v)| !v.is_null() && b.get(k) != Some(v)).map(|(k, _)| k)
                    });
                match extra {
                    Some(name) => Err(field(&name, "the suite runs pinned defaults; only seed, threshold and output_dir apply")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_overlay_file_values() {
        let file = ExperimentConfig::from_json(r#"{"experiment": "bridge-brownian", "seed": 3, "n_steps": 64}"#).unwrap();
        let flags = ExperimentConfig { n_steps: Some(128), ..Default::default() };
        let r = file.overlay(&flags).resolve().unwrap();
        assert_eq!((r.seed, r.n_steps, r.n_paths), (Some(3), Some(128), Some(200_000)));
    }

    #[test]
    fn validation_names_the_field() {
        let c = ExperimentConfig { experiment: Some(Experiment::BridgeBrownian), n_steps: Some(1), ..Default::default() };
        let err = c.resolve().unwrap_err().to_string();
        assert!(err.contains("`n_steps`"), "{err}");
        let c = ExperimentConfig { experiment: Some(Experiment::Suite), n_paths: Some(10), ..Default::default() };
        assert!(c.resolve().unwrap_err().to_string().contains("`n_paths`"));
        assert!(ExperimentConfig { experiment: Some(Experiment::Suite), ..Default::default() }.resolve().is_ok());
        let c = ExperimentConfig {
            experiment: Some(Experiment::StructuralDefault),
            barrier: Some(2.0),
            ..Default::default()
        };
        assert!(c.resolve().unwrap_err().to_string().contains("`barrier`"));
        assert!(ExperimentConfig::from_json(r#"{"experiment": "bridge-brownian", "typo": 1}"#).is_err());
        assert!(ExperimentConfig::from_json("{").is_err());
        assert!(ExperimentConfig::default().resolve().is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_a_report() {
        let r = ExperimentConfig { experiment: Some(Experiment::KyleBack), ..Default::default() }.resolve().unwrap();
        let report = serde_json::json!({"version": "x", "config": r, "reports": [], "wallclock_seconds": 1.0});
        let back = ExperimentConfig::from_json(&report.to_string()).unwrap();
        assert_eq!(back, r);
    }
}

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use filtration_lab::apps::{DriftVariant, PostDefault};
use filtration_lab::experiment::{run_experiment, write_outputs, Experiment, ExperimentConfig, RefinementKind, OUTPUT_DIR_ENV};
use filtration_lab::initial_enlargement::BridgeScheme;

/// Monte Carlo checks of Doob-Meyer decompositions under enlarged filtrations.
#[derive(Parser)]
#[command(name = "filtlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write report.json, reports.csv and tables.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// JSON config (flat keys, or a previous report.json); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long, value_enum)]
    refinement: Option<RefinementKind>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    vol: Option<f64>,
    #[arg(long)]
    barrier: Option<f64>,
    #[arg(long)]
    firm_value: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    drift_variant: Option<DriftVariant>,
    #[arg(long, value_enum)]
    post_default: Option<PostDefault>,
    #[arg(long, value_enum)]
    scheme: Option<BridgeScheme>,
    /// Any config key, as `key=value` with a JSON value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn flag_config(a: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut c = ExperimentConfig {
        experiment: a.experiment,
        seed: a.seed,
        n_paths: a.n_paths,
        n_steps: a.n_steps,
        refinement: a.refinement,
        threshold: a.threshold,
        output_dir: a.output_dir.clone(),
        lambda: a.lambda,
        n: a.n,
        horizon: a.horizon,
        mu: a.mu,
        vol: a.vol,
        barrier: a.barrier,
        firm_value: a.firm_value,
        thetas: a.thetas.clone(),
        drift_variant: a.drift_variant,
        post_default: a.post_default,
        scheme: a.scheme,
        ..Default::default()
    };
    if !a.set.is_empty() {
        let mut obj = serde_json::Map::new();
        for kv in &a.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects key=value, got `{kv}`"))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
            obj.insert(k.trim().to_string(), value);
        }
        let set = ExperimentConfig::from_json(&serde_json::Value::Object(obj).to_string()).map_err(|e| e.to_string())?;
        c = c.overlay(&set);
    }
    Ok(c)
}

fn run(a: RunArgs) -> ExitCode {
    let usage = |msg: String| {
        eprintln!("filtlab: {msg}");
        ExitCode::from(2)
    };
    let file = match &a.config {
        Some(path) => match ExperimentConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => return usage(e.to_string()),
        },
        None => ExperimentConfig::default(),
    };
    let flags = match flag_config(&a) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let config = match file.overlay(&flags).resolve() {
        Ok(c) => c,
        Err(e) => return usage(e.to_string()),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = a.workers {
        if w == 0 {
            return usage("invalid value for `workers`: must be at least 1".into());
        }
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return usage(format!("cannot start workers: {e}")),
    };
    let start = Instant::now();
    let out = match pool.install(|| run_experiment(&config)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("filtlab: run failed: {e}");
            return ExitCode::from(1);
        }
    };
    let wall = start.elapsed().as_secs_f64();
    for r in &out.reports {
        println!("{}", r.verdict_line());
    }
    for (e, secs) in &out.timings {
        eprintln!("{}: {secs:.2} s", e.name());
    }
    let dir = PathBuf::from(config.output_dir.clone().unwrap_or_default());
    if let Err(e) = write_outputs(&dir, &config, &out, wall) {
        eprintln!("filtlab: {e}");
        return ExitCode::from(1);
    }
    let bad = out.reports.iter().filter(|r| !r.as_expected()).count();
    println!("{} of {} checks as expected; reports in {}", out.reports.len() - bad, out.reports.len(), dir.display());
    if bad == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(a) => run(a),
    }
}

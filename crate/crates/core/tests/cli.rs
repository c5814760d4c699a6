use std::path::Path;
use std::process::Command;

fn filtlab(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_filtlab"))
        .args(["run", "--output-dir", out.to_str().unwrap()])
        .args(args)
        .env_remove("FILTLAB_OUTPUT_DIR")
        .output()
        .expect("run filtlab")
}

fn code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: [&str; 6] = ["--experiment", "bridge-brownian", "--n-paths", "4000", "--n-steps", "64"];

#[test]
fn usage_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = filtlab(&["--experiment", "bridge-brownian", "--n-steps", "1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_steps"));
    assert_eq!(code(&filtlab(&["--experiment", "no-such-thing"], dir.path())), 2);
    assert_eq!(code(&filtlab(&[], dir.path())), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": "bridge-brownian", "colour": 1}"#).unwrap();
    assert_eq!(code(&filtlab(&["--config", bad.to_str().unwrap()], dir.path())), 2);
    let o = filtlab(&["--experiment", "structural-default", "--barrier", "2"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("barrier"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn run_writes_reports_and_reruns_from_its_echo() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = filtlab(&SMALL, &first);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("PASS bridge-brownian: compensated B")));
    let text = std::fs::read_to_string(first.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["version", "config", "reports", "wallclock_seconds"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["config"]["n_paths"], 4000);
    let csv = std::fs::read_to_string(first.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("name,statistic,stderr,z,threshold,pass"));

    let second = dir.path().join("second");
    let cfg = first.join("report.json");
    let o = filtlab(&["--config", cfg.to_str().unwrap()], &second);
    assert_eq!(code(&o), 0);
    let again: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(second.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"], again["reports"]);
}

#[test]
fn flags_and_set_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment": "cf-identity", "n_paths": 3000, "n_steps": 16, "seed": 4}"#).unwrap();
    let out = dir.path().join("o");
    let o = filtlab(&["--config", cfg.to_str().unwrap(), "--seed", "5", "--set", "thetas=[0.25]"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["config"]["seed"], 5);
    assert_eq!(r["config"]["n_paths"], 3000);
    assert_eq!(r["config"]["thetas"], serde_json::json!([0.25]));
}

#[test]
fn failed_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL.to_vec();
    args.extend(["--threshold", "1e-9"]);
    let o = filtlab(&args, dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("FAIL ")));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_filtlab"))
        .args(["run", "--experiment", "cf-identity", "--n-paths", "2000", "--n-steps", "8"])
        .env("FILTLAB_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn structural_run_writes_the_default_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = filtlab(&["--experiment", "structural-default", "--n-paths", "3000", "--n-steps", "1024"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let curve = std::fs::read_to_string(dir.path().join("default_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("t,estimate,band"));
    let p: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[0] <= w[1]));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const ADDITIVE: &str = r#"
seed = 11
paths = 64
iota = 0.5
modes = 5
n_levels = [2, 3, 8]

[lambda]
type = "powerlaw"
scale = 2.0
exponent = 2.0

[q]
type = "explicit"
values = [1.0, 0.5, 0.25]

[diffusion]
type = "additive"
sigma = [1.0, 0.5, 2.0]

[xi]
type = "explicit"
values = [1.0, 0.0, -1.0, 0.5, 0.25]
"#;

fn linear() -> String {
    ADDITIVE.replace(
        "type = \"additive\"\nsigma = [1.0, 0.5, 2.0]",
        "type = \"linear\"\ngamma = 0.5\nrho = [0.3, 0.2, 0.1]",
    )
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spectral-em"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn check_lemma_margins_are_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lemma");
    let o = run(dir.path(), ADDITIVE, &["check-lemma", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let margins = csv_column(&out.join("weights.csv"), "margin");
    assert_eq!(margins.len(), 5 * (2 + 3 + 8));
    assert!(margins.iter().all(|m| m.parse::<f64>().unwrap() >= 0.0));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = format!("{ADDITIVE}\n[simulate]\nincrements = true\n");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = run(dir.path(), &cfg, &["simulate", "--out-dir", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectory.csv", "increments.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let values = csv_column(&a.join("trajectory.csv"), "value");
    // paths × (N + 1) × J with N = 10 merged steps
    assert_eq!(values.len(), 64 * 11 * 5);
    for v in &values {
        let x: f64 = v.parse().unwrap();
        assert_eq!(&format!("{x:.16e}"), v);
    }
}

#[test]
fn maxreg_additive_holds_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run(dir.path(), ADDITIVE, &["maxreg", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "holds (exact)");
    assert_eq!(report["monte_carlo"]["paths"], 64);
    assert!(report["exact"]["convolution_margin"].as_f64().unwrap() > 0.0);
    assert_eq!(csv_column(&out.join("contributions.csv"), "eta").len(), 11);
    assert!(csv_column(&out.join("moments.csv"), "exact").iter().all(|v| !v.is_empty()));
}

#[test]
fn maxreg_state_dependent_is_statistical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run(dir.path(), &linear(), &["maxreg", "--out-dir", out.to_str().unwrap(), "--paths", "500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "holds (statistical)");
    assert!(report["exact"].is_null());
    assert!(csv_column(&out.join("moments.csv"), "exact").iter().all(|v| v.is_empty()));
}

#[test]
fn oracle_columns_and_state_dependence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(dir.path(), ADDITIVE, &["oracle", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    let moments = out.join("moments.csv");
    let full = csv_column(&moments, "full");
    let conv = csv_column(&moments, "convolution");
    assert_eq!(full.len(), 11 * 5);
    for (f, c) in full.iter().zip(&conv) {
        assert!(f.parse::<f64>().unwrap() >= c.parse::<f64>().unwrap());
    }
    assert!(csv_column(&moments, "continuous").iter().all(|v| !v.is_empty()));

    let o = run(dir.path(), &linear(), &["oracle", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "numerical");
    assert_eq!(err["subcommand"], "oracle");
}

#[test]
fn compare_uniform_reports_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = run(dir.path(), ADDITIVE, &["compare-uniform", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["uniform_steps"], 4);
    assert_eq!(r["increment_budget"]["nonuniform"], 13);
    assert_eq!(r["increment_budget"]["uniform"], 12);
    assert_eq!(r["nonuniform"]["verdict"], "holds (exact)");
    assert_eq!(r["uniform"]["verdict"], "holds (exact)");
}

#[test]
fn validation_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), ADDITIVE, &["maxreg", "--iota", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    assert_eq!(err["error"]["key"], "iota");
    assert!(err["error"]["message"].as_str().unwrap().contains("iota must lie in [0, 0.5]"));

    let o = run(dir.path(), &ADDITIVE.replace("seed = 11", ""), &["simulate"]);
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["key"], "seed");

    let o = run(dir.path(), &ADDITIVE.replace("seed = 11", ""), &["simulate", "--seed", "3", "--out-dir", dir.path().join("s").to_str().unwrap()]);
    assert!(o.status.success());
}

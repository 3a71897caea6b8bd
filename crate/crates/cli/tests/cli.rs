use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_freq-unravel");

struct Run {
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exited normally")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn csv(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        read_csv(&self.out)
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn run_with(dir: &TempDir, name: &str, config: &str, mode: &str, extra: &[&str], env: &[(&str, &str)]) -> Run {
    let cfg = dir.path().join(format!("{name}.toml"));
    fs::write(&cfg, config).unwrap();
    let ext = if mode == "validate" { "json" } else { "csv" };
    let out = dir.path().join(format!("{name}.{ext}"));
    let mut cmd = Command::new(BIN);
    cmd.arg(mode).arg("--config").arg(&cfg).arg("--out").arg(&out).args(extra);
    for (k, v) in env {
        cmd.env(k, v);
    }
    Run {
        out,
        output: cmd.output().unwrap(),
    }
}

fn run(dir: &TempDir, name: &str, config: &str, mode: &str) -> Run {
    run_with(dir, name, config, mode, &[], &[])
}

const BASE: &str = "model = \"two_level\"\nomega_rabi = 6.0\n";

fn small(extra: &str) -> String {
    format!("{BASE}tau = 1.0\nomega_max = 8.0\nn_max = 3\nn_trials = 16\nseed = 5\n{extra}")
}

#[test]
fn ensemble_csv_layout() {
    let dir = TempDir::new().unwrap();
    let r = run(&dir, "ens", &small(""), "ensemble");
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv();
    assert_eq!(header[0], "t[1/Gamma]");
    assert!(header.iter().all(|h| h.ends_with(']')), "{header:?}");
    assert!(header.contains(&"excited_population_mean[1]".to_string()));
    // one row per sample time, the last at tau
    assert!(rows.len() > 100 && rows.len() <= 401);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows.last().unwrap()[0], 1.0);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let (lh, lrows) = read_csv(&dir.path().join("ens.levels.csv"));
    assert_eq!(lh.len(), 1 + 4 * 4);
    assert_eq!(lrows.len(), rows.len());
}

#[test]
fn trajectory_csv_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{BASE}tau = 6.283185307179586\n[record]\nfrequencies = [3.0, -2.0]\n");
    let r = run(&dir, "traj", &cfg, "trajectory");
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv();
    assert_eq!(header.len(), 1 + 2 * 3);
    assert_eq!(header[1], "norm_sqr_L0[1]");
    assert_eq!(rows[0][1], 1.0);
    // deeper levels start from the vacuum
    assert_eq!(rows[0][3], 0.0);
    assert_eq!(rows[0][5], 0.0);
}

#[test]
fn spectrum_csv_layout() {
    let dir = TempDir::new().unwrap();
    let r = run(&dir, "spec", &small("initial = \"steady\"\n"), "spectrum");
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv();
    assert_eq!(
        header,
        ["omega[Gamma]", "S_sim[photons]", "S_sim_stderr[photons]", "S_oracle[photons]"]
    );
    // grid |p| <= 1 at tau = 1, omega_max = 8
    assert_eq!(rows.len(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("spec.summary.json")).unwrap()).unwrap();
    let sum: f64 = rows.iter().map(|r| r[1]).sum();
    assert!((summary["sum_sim"].as_f64().unwrap() - sum).abs() < 1e-12);
}

#[test]
fn reconstruct_csv_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{BASE}tau = 0.5\nomega_max = 13.0\nn_max = 2\n");
    let r = run(&dir, "rec", &cfg, "reconstruct");
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv();
    assert_eq!(header.len(), 1 + 3 * 6 + 5);
    let last = rows.last().unwrap();
    let err = last[header.iter().position(|h| h == "max_err_ordered[1]").unwrap()];
    let bound = last[header.iter().position(|h| h == "truncation_bound[1]").unwrap()];
    assert!(err <= bound);
    // reconstruct needs unordered records of at most three decays
    let r = run(&dir, "rec4", &format!("{BASE}tau = 0.5\nomega_max = 13.0\nn_max = 4\n"), "reconstruct");
    assert_eq!(r.code(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("ensemble", small("")),
        ("spectrum", small("initial = \"steady\"\n")),
        ("trajectory", format!("{BASE}tau = 6.283185307179586\n[record]\nfrequencies = [1.0]\n")),
        ("reconstruct", format!("{BASE}tau = 0.5\nomega_max = 13.0\nn_max = 2\n")),
    ];
    for (mode, cfg) in &cases {
        let a = run(&dir, &format!("{mode}_a"), cfg, mode);
        let b = run(&dir, &format!("{mode}_b"), cfg, mode);
        assert_eq!(a.code(), 0, "{mode}: {}", a.stderr());
        assert_eq!(fs::read(&a.out).unwrap(), fs::read(&b.out).unwrap(), "{mode}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let cfg = small("n_trials = 70\n").replace("n_trials = 16\n", "");
    let one = run_with(&dir, "w1", &cfg, "ensemble", &[], &[("FREQ_UNRAVEL_WORKERS", "1")]);
    let three = run_with(&dir, "w3", &cfg, "ensemble", &[], &[("FREQ_UNRAVEL_WORKERS", "3")]);
    assert_eq!(one.code(), 0, "{}", one.stderr());
    assert_eq!(fs::read(&one.out).unwrap(), fs::read(&three.out).unwrap());
    let bad = run_with(&dir, "w0", &cfg, "ensemble", &[], &[("FREQ_UNRAVEL_WORKERS", "zero")]);
    assert_eq!(bad.code(), 1);
}

#[test]
fn command_line_overrides() {
    let dir = TempDir::new().unwrap();
    let a = run(&dir, "s5", &small(""), "ensemble");
    let b = run_with(&dir, "s6", &small(""), "ensemble", &["--seed", "6"], &[]);
    assert_ne!(fs::read(&a.out).unwrap(), fs::read(&b.out).unwrap());
    let c = run_with(&dir, "t1", &small(""), "ensemble", &["--trials", "1"], &[]);
    assert_eq!(c.code(), 1);
    assert!(c.stderr().contains("n_trials"), "{}", c.stderr());
}

#[test]
fn config_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("dt", small("dt = 0.1\n")),
        ("tau", format!("{BASE}tau = 0.0\n")),
        ("colour", small("colour = 3\n")),
        ("omega_rabi", "model = \"two_level\"\ntau = 1.0\n".to_string()),
        ("p_max", format!("{BASE}tau = 0.1\nomega_max = 8.0\n")),
        ("model", small("").replace("two_level", "three_level")),
    ];
    for (key, cfg) in &cases {
        let r = run(&dir, key, cfg, "ensemble");
        assert_eq!(r.code(), 1, "{key}: {}", r.stderr());
        assert!(r.stderr().contains(key), "{key}: {}", r.stderr());
    }
    let r = run(&dir, "mode", &small(""), "sideways");
    assert_eq!(r.code(), 1);
    let missing = Command::new(BIN)
        .args(["ensemble", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let usage = Command::new(BIN).arg("ensemble").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn large_dt_message_names_the_bound() {
    let dir = TempDir::new().unwrap();
    let r = run(&dir, "dt", &small("dt = 0.1\n"), "ensemble");
    // 0.1 / (8 + 6 + 1)
    assert!(r.stderr().contains("0.00666"), "{}", r.stderr());
}

#[test]
fn numerical_failure_exits_2() {
    let dir = TempDir::new().unwrap();
    for mode in ["trajectory", "ensemble", "validate"] {
        let cfg = format!("{BASE}tau = 1.0\nomega_max = 8.0\nn_trials = 4\n[debug]\nnan_hamiltonian = true\n");
        let r = run(&dir, mode, &cfg, mode);
        assert_eq!(r.code(), 2, "{mode}: {}", r.stderr());
    }
}

#[test]
fn validation_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{BASE}tau = 1.0\nn_trials = 20\n[debug]\nbound_scale = 0.0\n");
    let r = run(&dir, "zero", &cfg, "validate");
    assert_eq!(r.code(), 3, "{}", r.stderr());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r.out).unwrap()).unwrap();
    assert_eq!(report["all_pass"], false);
}

#[test]
fn validate_default_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{BASE}tau = 1.0\nn_trials = 40\nseed = 1\n");
    let r = run(&dir, "ok", &cfg, "validate");
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r.out).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 10);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn lqgame(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lqgame"));
    cmd.args(args).env_remove("LQGAME_OUTPUT_DIR").env_remove("LQGAME_FORCE_DIVERGE_SEEDS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn short_simulate(cfg: &Path, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--override",
        "sim.horizon=20",
        "--output-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&mut lqgame(&args))
}

#[test]
fn simulate_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = short_simulate(&config("scalar.toml"), tmp.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["config.toml", "trajectory.csv", "epochs.csv", "summary.txt"] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,x_1,u1_1,u2_1,running_payoff,estimate_error,mode,gamma_k,stability_stat"
    );
    // record_stride 20 at h = 0.005 over 20 time units, plus the end point
    assert_eq!(csv.lines().count(), 1 + 200 + 1);
    assert!(!tmp.path().join("plot.py").exists());
}

#[test]
fn step_override_reaches_summary() {
    let tmp = TempDir::new().unwrap();
    let out = short_simulate(&config("scalar.toml"), tmp.path(), &["--override", "sim.h=0.0025"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
    assert!(summary.contains("h = 0.0025"), "{summary}");
    let resolved = fs::read_to_string(tmp.path().join("config.toml")).unwrap();
    assert!(resolved.contains("h = 0.0025"));
}

#[test]
fn missing_weight_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(config("scalar.toml")).unwrap();
    let broken: String = text.lines().filter(|l| !l.starts_with("r2")).map(|l| format!("{l}\n")).collect();
    let path = tmp.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let out = run(&mut lqgame(&["riccati", "--config", path.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("r2"), "{}", stderr(&out));
}

#[test]
fn unknown_override_key_is_config_error() {
    let out = run(&mut lqgame(&[
        "riccati",
        "--config",
        config("scalar.toml").to_str().unwrap(),
        "--override",
        "sim.stepsize=0.01",
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stepsize"), "{}", stderr(&out));
}

#[test]
fn riccati_scalar_value() {
    let out = run(&mut lqgame(&["riccati", "--config", config("scalar.toml").to_str().unwrap()]));
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("value = 1.414214"), "{text}");
    assert!(text.contains("closed-loop eigenvalues = [-0.707107]"), "{text}");
}

#[test]
fn riccati_degenerate_reports_no_solution() {
    let out = run(&mut lqgame(&["riccati", "--config", config("degenerate.toml").to_str().unwrap()]));
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "NoStabilizingSolution(imaginary-axis)");
}

#[test]
fn riccati_two_state_residual() {
    let out = run(&mut lqgame(&["riccati", "--config", config("two_state.toml").to_str().unwrap()]));
    assert!(out.status.success());
    let text = stdout(&out);
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("residual = "))
        .expect("residual line")
        .parse()
        .unwrap();
    assert!(residual <= 1e-8, "{text}");
}

#[test]
fn unknown_experiment_is_usage_error() {
    let out = run(&mut lqgame(&["diagnose", "bogus", "--config", config("scalar.toml").to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_member_ensemble_matches_simulate() {
    let sim_dir = TempDir::new().unwrap();
    let ens_dir = TempDir::new().unwrap();
    let out = short_simulate(&config("two_state.toml"), sim_dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&mut lqgame(&[
        "ensemble",
        "--config",
        config("two_state.toml").to_str().unwrap(),
        "--override",
        "sim.horizon=20",
        "--seeds",
        "1",
        "--output-dir",
        ens_dir.path().to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", stderr(&out));
    for (a, b) in [("trajectory.csv", "seed_42_trajectory.csv"), ("epochs.csv", "seed_42_epochs.csv")] {
        let single = fs::read(sim_dir.path().join(a)).unwrap();
        let member = fs::read(ens_dir.path().join(b)).unwrap();
        assert_eq!(single, member, "{a} differs");
    }
}

#[test]
fn forced_divergence_is_isolated() {
    let tmp = TempDir::new().unwrap();
    let out = run(lqgame(&[
        "ensemble",
        "--config",
        config("scalar.toml").to_str().unwrap(),
        "--override",
        "sim.horizon=20",
        "--seeds",
        "3",
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ])
    .env("LQGAME_FORCE_DIVERGE_SEEDS", "43"));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("ensemble.csv")).unwrap();
    let status: Vec<(&str, &str)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap(), f.next().unwrap())
        })
        .collect();
    assert_eq!(status, vec![("42", "ok"), ("43", "diverged"), ("44", "ok")]);
    // the diverged member still leaves its partial trajectory
    assert!(tmp.path().join("seed_43_trajectory.csv").is_file());
    assert!(tmp.path().join("ensemble_summary.csv").is_file());
}

#[test]
fn plot_script_leaves_csv_unchanged() {
    let plain = TempDir::new().unwrap();
    let plotted = TempDir::new().unwrap();
    assert!(short_simulate(&config("scalar.toml"), plain.path(), &[]).status.success());
    assert!(short_simulate(&config("scalar.toml"), plotted.path(), &["--emit-plot-script"]).status.success());
    assert!(plotted.path().join("plot.py").is_file());
    for f in ["trajectory.csv", "epochs.csv", "summary.txt"] {
        assert_eq!(fs::read(plain.path().join(f)).unwrap(), fs::read(plotted.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = run(lqgame(&[
        "simulate",
        "--config",
        config("scalar.toml").to_str().unwrap(),
        "--override",
        "sim.horizon=5",
    ])
    .env("LQGAME_OUTPUT_DIR", tmp.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("trajectory.csv").is_file());
}

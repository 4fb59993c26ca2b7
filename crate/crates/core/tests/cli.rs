//! The `ncurve` binary end to end: exit codes, help text and output shapes.

use std::path::Path;
use std::process::{Command, Output};

fn ncurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncurve"))
        .args(args)
        .output()
        .expect("failed to launch ncurve")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_observation(dir: &Path) -> String {
    let path = dir.join("obs.csv");
    std::fs::write(&path, "x,y\n0.78,0.0\n1.56,0.0\n2.33,0.0\n3.11,0.0\n").unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.toml");
    std::fs::write(&cfg, "train_count = 5\ntest_count = 3\n").unwrap();
    let out = dir.path().join("report.json");
    let o = ncurve(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--predictor",
        "cv",
        "--metric",
        "both",
        "--projections",
        "16",
        "--samples",
        "128",
        "--p-order",
        "2",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["predictor"], "cv");
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert!(records
        .iter()
        .all(|r| r["nll"].is_number() && r["swd"].is_number()));
}

#[test]
fn usage_errors_exit_2() {
    let o = ncurve(&["evaluate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    assert_eq!(ncurve(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ncurve(&[]).status.code(), Some(2));
    assert_eq!(
        ncurve(&["evaluate", "--predictor", "lstm"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ncurve(&["evaluate", "--metric", "mse"]).status.code(),
        Some(2)
    );
    assert_eq!(ncurve(&["posterior"]).status.code(), Some(2));
}

#[test]
fn missing_spec_exits_1_naming_path() {
    let o = ncurve(&["prior", "--spec", "/nonexistent/scene.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("/nonexistent/scene.toml"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn invalid_spec_exits_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "format_version = 2\nseed = 1\n").unwrap();
    let o = ncurve(&["generate", "--spec", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("format_version"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_flag() {
    let expected: [(&str, &[&str]); 5] = [
        (
            "generate",
            &["--spec", "--seed", "--count", "--length", "--out"],
        ),
        ("prior", &["--spec", "--seed", "--out"]),
        (
            "posterior",
            &["--spec", "--seed", "--observation", "--n-pred", "--out"],
        ),
        (
            "evaluate",
            &[
                "--spec",
                "--config",
                "--seed",
                "--out",
                "--predictor",
                "--metric",
                "--projections",
                "--samples",
                "--p-order",
            ],
        ),
        (
            "export-plot-data",
            &["--spec", "--seed", "--out", "--observation", "--report"],
        ),
    ];
    for (cmd, flags) in expected {
        let o = ncurve(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn generate_shape() {
    let o = ncurve(&["generate", "--count", "3", "--length", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trajectory,component,step,x0,x1"));
    assert_eq!(lines.count(), 3 * 7);
}

#[test]
fn prior_shape() {
    let o = ncurve(&["prior"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let comps = v["components"].as_array().unwrap();
    assert_eq!(comps.len(), 3);
    assert_eq!(comps[0]["length"], 19);
}

#[test]
fn posterior_shape() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_observation(dir.path());
    let o = ncurve(&["posterior", "--observation", &obs, "--n-pred", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["horizon"], 4);
    let comps = v["components"].as_array().unwrap();
    assert_eq!(comps.len(), 3);
    let total: f64 = comps.iter().map(|c| c["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn posterior_rejects_overlong_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_observation(dir.path());
    let o = ncurve(&["posterior", "--observation", &obs, "--n-pred", "40"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_plot_data_files() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_observation(dir.path());
    let out = dir.path().join("plots");
    let o = ncurve(&[
        "export-plot-data",
        "--out",
        out.to_str().unwrap(),
        "--count",
        "4",
        "--observation",
        &obs,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in [
        "prior_0_straight.csv",
        "samples.csv",
        "posterior.csv",
        "posterior_component_2.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let prior = std::fs::read_to_string(out.join("prior_1_left.csv")).unwrap();
    assert_eq!(prior.lines().count(), 1 + 25);
}

#[test]
fn refuses_to_overwrite_input() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_observation(dir.path());
    let before = std::fs::read_to_string(&obs).unwrap();
    let o = ncurve(&["posterior", "--observation", &obs, "--out", &obs]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(&obs).unwrap(), before);
}

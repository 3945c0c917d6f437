use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixed_em_cli::csv_io::{load, Layout};
use mixed_em_cli::report::FitReport;
use mixed_em_core::SimulationSpec;

fn mixed_em(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixed-em"))
        .args(args)
        .env_remove("MIXED_EM_SEED")
        .output()
        .unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn simulated(dir: &Path) -> PathBuf {
    let spec = SimulationSpec::balanced(8, 5, vec![1.0, 0.5], 2.0, 1.0, 99);
    fs::write(dir.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let out = mixed_em(&[
        "simulate",
        "--spec",
        &path(dir, "spec.json"),
        "--out",
        &path(dir, "d.csv"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join("d.csv")
}

#[test]
fn simulate_is_byte_identical_and_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let first = fs::read(simulated(dir.path())).unwrap();
    let truth = fs::read_to_string(dir.path().join("d.truth.json")).unwrap();
    let second = fs::read(simulated(dir.path())).unwrap();
    assert_eq!(first, second);
    assert!(truth.contains("\"seed\": 99"));
    assert!(String::from_utf8(first).unwrap().starts_with("y,x1,grp\n"));
}

#[test]
fn seed_flag_beats_environment_beats_spec() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    let base = fs::read(d.join("d.csv")).unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mixed-em"));
        cmd.args([
            "simulate",
            "--spec",
            &path(d, "spec.json"),
            "--out",
            &path(d, "e.csv"),
        ]);
        cmd.args(extra);
        match env {
            Some(v) => cmd.env("MIXED_EM_SEED", v),
            None => cmd.env_remove("MIXED_EM_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(d.join("e.csv")).unwrap()
    };
    assert_eq!(run(&[], None), base);
    let from_env = run(&[], Some("5"));
    assert_ne!(from_env, base);
    assert_eq!(run(&["--seed", "5"], Some("7")), from_env);
    assert_eq!(run(&["--seed", "99"], Some("5")), base);
}

#[test]
fn fit_report_round_trips_and_dumped_design_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulated(d);
    let out = mixed_em(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--criterion",
        "ml",
        "--inspect",
        "--trace-loglik",
        "--out",
        &path(d, "r.json"),
        "--dump-design",
        &path(d, "design.csv"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = fs::read_to_string(d.join("r.json")).unwrap();
    let report: FitReport = serde_json::from_str(&text).unwrap();
    assert_eq!(
        serde_json::to_string_pretty(&report).unwrap().trim_end(),
        text.trim_end()
    );
    assert!(report.converged);
    assert_eq!(report.history.len(), report.iterations);
    assert!(report.loglik_initial.is_some() && report.matrices.is_some());

    let original = load(&data, &Layout::standard()).unwrap();
    let header = fs::read_to_string(d.join("design.csv")).unwrap();
    let header: Vec<&str> = header.lines().next().unwrap().split(',').collect();
    let layout = Layout {
        response: "y".into(),
        design_cols: Some(
            header
                .iter()
                .filter(|h| h.starts_with("X:"))
                .map(|h| h.to_string())
                .collect(),
        ),
        z_cols: Some(
            header
                .iter()
                .filter(|h| h.starts_with("Z:"))
                .map(|h| h.to_string())
                .collect(),
        ),
        no_intercept: true,
    };
    let reloaded = load(&d.join("design.csv"), &layout).unwrap();
    assert_eq!(reloaded.model.x(), original.model.x());
    assert_eq!(reloaded.model.z(), original.model.z());
    assert_eq!(reloaded.model.y(), original.model.y());
}

#[test]
fn fit_to_stdout_and_nonconvergence_exit() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let out = mixed_em(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--criterion",
        "reml",
        "--maxit",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let report: FitReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations, 1);
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("nogrp.csv"), "y,x1\n1,2\n3,4\n5,7\n").unwrap();
    let out = mixed_em(&["fit", "--data", &path(d, "nogrp.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--z-cols"));

    let out = mixed_em(&["fit", "--data", &path(d, "missing.csv")]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("bad.json"), "{\"n_groups\": 0}").unwrap();
    let out = mixed_em(&[
        "simulate",
        "--spec",
        &path(d, "bad.json"),
        "--out",
        &path(d, "x.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = mixed_em(&[
        "fit",
        "--data",
        &path(d, "nogrp.csv"),
        "--criterion",
        "bayes",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_prints_two_point_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.csv"), "y,g\n1,1\n2,0\n").unwrap();
    let args = [
        "inspect",
        "--data",
        &path(d, "tiny.csv"),
        "--z-cols",
        "g",
        "--criterion",
        "reml",
        "--iteration",
        "0",
    ];
    let out = mixed_em(&args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("tau2 = 1.0000000000, sigma2 = 1.0000000000"));
    let block = |title: &str| -> String {
        text.split(title)
            .nth(1)
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .trim()
            .to_string()
    };
    assert_eq!(block("C_etaeta"), "0.6666666667");
    assert_eq!(block("(M_etaeta)^-1"), "0.5000000000");
    assert!(text.contains("tr{(M_etaeta)^-1} = 0.5000000000"));
    assert!(text.contains("tr{C_etaeta} = 0.6666666667"));
    assert!(text.contains("tr{[X Z] C [X Z]'} = 1.3333333333"));
    assert!(text.contains("schur residual"));

    let mut args = args.to_vec();
    *args.last_mut().unwrap() = "100000";
    assert_eq!(mixed_em(&args).status.code(), Some(2));
}

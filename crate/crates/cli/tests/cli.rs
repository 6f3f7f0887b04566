use clap::Parser;
use rdl_cli::*;
use std::path::Path;
use std::process::Command;

fn flags(args: &[&str]) -> Flags {
    Flags::try_parse_from(std::iter::once("rdl").chain(args.iter().copied())).unwrap()
}

fn rdl(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rdl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(SEED_ENV)
        .output()
        .unwrap()
}

fn only_run_dir(out: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn empty_args_give_defaults() {
    let cfg = parse_config(&flags(&[]), None).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!((cfg.d, cfg.i, cfg.horizon, cfg.y, cfg.p), (2, 1, 4.0, 1.0, 2.0));
    assert_eq!((cfg.paths, cfg.depth, cfg.half_width, cfg.points, cfg.seed), (100_000, 8, 20.0, 256, 0xD1AD1C));
}

#[test]
fn moment_flags_parse() {
    let cfg = parse_config(&flags(&["--experiment", "moments", "--d", "2", "--i", "1", "--N", "3", "--mode", "enumeration"]), None).unwrap();
    assert_eq!(cfg.experiment, Experiment::Moments);
    assert_eq!(cfg.ns, Some(vec![3]));
    assert_eq!(cfg.mode, Mode::Enumeration);
}

#[test]
fn slice_beyond_dimension_is_rejected() {
    let err = parse_config(&flags(&["--i", "3", "--d", "2"]), None).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err}");
    let out = tempfile::tempdir().unwrap();
    assert_eq!(rdl(&["--i", "3", "--d", "2"], out.path()).status.code(), Some(2));
}

#[test]
fn other_ranges_are_validated() {
    for args in [
        &["--N", "1,4"][..],
        &["--N", "8,4"],
        &["--M", "100"],
        &["--p", "1"],
        &["--y=-1"],
        &["--walk", "decoupled"],
        &["--experiment", "vector", "--N", "4,8"],
        &["--threads", "0"],
    ] {
        assert!(parse_config(&flags(args), None).is_err(), "{args:?}");
    }
    assert!(Flags::try_parse_from(["rdl", "--experiment", "nope"]).is_err());
}

#[test]
fn precedence_is_flags_then_file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.ini");
    std::fs::write(&file, "experiment = weak-convergence\nd = 3\ni = 2\nseed = 5\nN = 4,8\n").unwrap();
    let path = file.to_str().unwrap();
    let cfg = parse_config(&flags(&["--config", path, "--i", "3"]), Some("9")).unwrap();
    assert_eq!((cfg.d, cfg.i, cfg.seed), (3, 3, 5));
    assert_eq!(cfg.ns, Some(vec![4, 8]));
    assert_eq!(parse_config(&flags(&[]), Some("9")).unwrap().seed, 9);
    assert_eq!(parse_config(&flags(&["--seed", "11"]), Some("9")).unwrap().seed, 11);
}

#[test]
fn malformed_files_are_rejected() {
    for text in ["colour = red\n", "[run]\nd = 2\n", "d = two\n"] {
        let mut cfg = RunConfig::default();
        assert!(apply_file(&mut cfg, text).is_err(), "{text:?}");
    }
}

#[test]
fn moments_run_writes_exact_entries() {
    let out = tempfile::tempdir().unwrap();
    let o = rdl(&["--experiment", "moments", "--N", "3"], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(out.path());
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("moments-"));
    let rep = report(&dir);
    let estimates = rep["estimates"].as_array().unwrap();
    assert!(!estimates.is_empty() && estimates.iter().all(|e| e["exact"] == true));
    assert_eq!(rep["params"]["run"]["experiment"], "moments");
    assert!(rep["params"]["run"].get("threads").is_none());
    assert!(rep["run_info"]["timestamp"].is_string());
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("param,value,estimate,stderr,exact"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 5);
    assert_eq!(row[4], "1");
    let mantissa = row[2].split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn single_resolution_sweep_has_no_monotonicity_check() {
    let cfg = RunConfig {
        experiment: Experiment::WeakConvergence,
        ns: Some(vec![4]),
        paths: 500,
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    assert!(rep.checks.iter().all(|c| c.name != "gap_decreases"));
    assert!(rep.checks.iter().any(|c| c.name == "gap_consistent_with_zero"));
}

#[test]
fn reruns_match_apart_from_run_info() {
    let base = RunConfig {
        experiment: Experiment::MartingaleApprox,
        ns: Some(vec![4, 8]),
        paths: 400,
        ..Default::default()
    };
    let a = run_with_threads(&RunConfig { threads: Some(1), ..base.clone() }).unwrap();
    let b = run_with_threads(&RunConfig { threads: Some(2), ..base }).unwrap();
    assert_eq!(deterministic_json(&a), deterministic_json(&b));

    let out = tempfile::tempdir().unwrap();
    let args = ["--experiment", "weak-formulation", "--N", "4", "--paths", "300", "--M", "64"];
    for _ in 0..2 {
        rdl(&args, out.path());
    }
    let mut reports: Vec<_> = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| {
            let mut r = report(&e.unwrap().path());
            r.as_object_mut().unwrap().remove("run_info");
            r
        })
        .collect();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports.pop(), reports.pop());
}

#[test]
fn failing_checks_give_exit_one_and_are_named() {
    let out = tempfile::tempdir().unwrap();
    let o = rdl(&["--experiment", "transform-identity", "--i", "1"], out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("transform_identity_i1"));
    let rep: rdl_core::experiments::ExperimentReport = serde_json::from_value(report(&only_run_dir(out.path()))).unwrap();
    assert_eq!(exit_status(&rep), 1);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = rdl(&["--experiment", "operator-algebra"], &blocker);
    assert_eq!(o.status.code(), Some(3));
}

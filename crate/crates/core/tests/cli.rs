mod common;

use std::fs;

use common::cli;

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

const SMALL: [&str; 4] = ["--horizon-s", "1800", "--particles", "40"];

#[test]
fn simulate_validate_filter_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();

    let mut args = vec!["simulate", "--out", data_s];
    args.extend(SMALL);
    let out = cli(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in [
        "config.toml",
        "corridor.csv",
        "demand.csv",
        "truth.csv",
        "loops.csv",
        "boundary.csv",
        "probes.csv",
        "geometry.csv",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let config = data.join("config.toml");
    let config_s = config.to_str().unwrap();
    let out = cli(&["validate", "--config", config_s, "--data", data_s]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let est = dir.path().join("est");
    let est_s = est.to_str().unwrap();
    let out = cli(&[
        "filter",
        "--config",
        config_s,
        "--data",
        data_s,
        "--out",
        est_s,
        "--mode",
        "loops_only",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let estimate = est.join("estimate_loops_only.csv");
    assert!(estimate.is_file());
    assert!(est.join("report.csv").is_file());

    let out = cli(&[
        "evaluate",
        "--estimate",
        estimate.to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("overall"), "{stdout}");

    let out = cli(&[
        "evaluate",
        "--estimate",
        data.join("truth.csv").to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(
        text(&out.stdout).contains("0.0000"),
        "{}",
        text(&out.stdout)
    );
}

#[test]
fn invalid_loop_file_reports_line_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    let mut args = vec!["simulate", "--out", data.to_str().unwrap()];
    args.extend(SMALL);
    assert!(cli(&args).status.success());

    let loops = data.join("loops.csv");
    let mut lines: Vec<String> = fs::read_to_string(&loops)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "density").unwrap();
    fields[col] = "-0.01".into();
    lines[3] = fields.join(",");
    fs::write(&loops, lines.join("\n") + "\n").unwrap();

    let out = cli(&[
        "validate",
        "--config",
        data.join("config.toml").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("loops.csv") && err.contains("line 4"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["filter"]).status.code(), Some(1));
    assert_eq!(
        cli(&["validate", "--mode", "both_ways"]).status.code(),
        Some(1)
    );
    assert_eq!(
        cli(&["validate", "--penetration-rate", "2"]).status.code(),
        Some(1)
    );
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "validate",
        "--config",
        dir.path().join("absent.toml").to_str().unwrap(),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(text(&out.stderr).contains("absent.toml"));

    let out = cli(&[
        "filter",
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--mode",
        "loops_only",
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(
        text(&out.stderr).contains("loops.csv"),
        "{}",
        text(&out.stderr)
    );
}

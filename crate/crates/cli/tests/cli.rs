use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domcftp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const MODEL: &[&str] = &[
    "--window",
    "0,1,0,1",
    "--lambda",
    "60",
    "--log10-gamma1",
    "0.3",
    "--log10-gamma2",
    "-0.3",
    "--r1",
    "0.05",
    "--r2",
    "0.02",
];

fn simulate_to(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut args = vec!["simulate", "--seed", seed, "--out", path.to_str().unwrap()];
    args.extend_from_slice(MODEL);
    ok(&args);
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = simulate_to(dir.path(), "a.csv", "5");
    let b = simulate_to(dir.path(), "b.csv", "5");
    let c = simulate_to(dir.path(), "c.csv", "6");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let rows = csv_rows(&a);
    assert_eq!(rows[0], ["x", "y"]);
    assert!(rows.len() > 10);
}

#[test]
fn simulate_reports_run_statistics_and_trajectory() {
    let dir = TempDir::new().unwrap();
    let traj = dir.path().join("traj.csv");
    let mut args = vec!["simulate", "--seed", "2", "--trajectory", traj.to_str().unwrap()];
    args.extend_from_slice(MODEL);
    let out = ok(&args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("horizon_used"));
    assert!(stderr.contains("events_processed"));
    let rows = csv_rows(&traj);
    assert_eq!(rows[0], ["time", "kind", "point_id", "x", "y", "mark"]);
    assert!(rows.iter().skip(1).any(|r| r[1] == "birth"));
    assert!(rows.iter().skip(1).filter(|r| r[1] == "death").all(|r| r[3].is_empty()));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let bad_window = run(&["simulate", "--window", "0,1,1,0", "--lambda", "10"]);
    assert_eq!(bad_window.status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    let missing_input = run(&["summary", "--window", "0,1,0,1", "--input", missing.to_str().unwrap()]);
    assert_eq!(missing_input.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing_input.stderr).contains("nope.csv"));

    let capped = run(&[
        "simulate",
        "--window",
        "0,1,0,1",
        "--lambda",
        "200",
        "--log10-gamma1",
        "3",
        "--r1",
        "0.1",
        "--max-horizon",
        "2",
    ]);
    assert_eq!(capped.status.code(), Some(3));

    let unknown_flag = run(&["simulate", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn profile_fit_writes_full_grid() {
    let dir = TempDir::new().unwrap();
    let data = simulate_to(dir.path(), "data.csv", "3");
    let profile = dir.path().join("profile.csv");
    let report = dir.path().join("fit.json");
    ok(&[
        "fit",
        "--window",
        "0,1,0,1",
        "--input",
        data.to_str().unwrap(),
        "--r1-grid",
        "0.03:0.07:5",
        "--r2-grid",
        "0.01:0.03:5",
        "--profile",
        profile.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let rows = csv_rows(&profile);
    assert_eq!(rows[0], ["r1", "r2", "logPL"]);
    assert_eq!(rows.len(), 26);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in [
        "log10_lambda",
        "log10_gamma1",
        "log10_gamma2",
        "r1",
        "r2",
        "logPL",
        "converged",
        "iterations",
        "std_errors",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn poisson_fit_recovers_the_intensity() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("csr.csv");
    ok(&[
        "simulate",
        "--window",
        "0,2,0,1",
        "--lambda",
        "40",
        "--seed",
        "9",
        "--out",
        data.to_str().unwrap(),
    ]);
    let n = csv_rows(&data).len() - 1;
    let out = ok(&["fit", "--window", "0,2,0,1", "--input", data.to_str().unwrap()]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda = 10f64.powf(json["log10_lambda"].as_f64().unwrap());
    assert!((lambda / (n as f64 / 2.0) - 1.0).abs() < 1e-6);
    assert!(json["log10_gamma1"].is_null());
}

#[test]
fn summary_writes_one_file_per_statistic() {
    let dir = TempDir::new().unwrap();
    let data = simulate_to(dir.path(), "pts.csv", "4");
    let out = dir.path().join("s.csv");
    ok(&[
        "summary",
        "--window",
        "0,1,0,1",
        "--input",
        data.to_str().unwrap(),
        "--stat",
        "K,L,T",
        "--rsteps",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    for s in ["K", "L", "T"] {
        let rows = csv_rows(&dir.path().join(format!("s_{s}.csv")));
        assert_eq!(rows[0], ["r", "value"]);
        assert_eq!(rows.len(), 51);
    }
}

#[test]
fn simulated_pattern_round_trips_through_summary() {
    let dir = TempDir::new().unwrap();
    let data = simulate_to(dir.path(), "pts.csv", "8");
    let out = ok(&[
        "summary",
        "--window",
        "0,1,0,1",
        "--input",
        data.to_str().unwrap(),
        "--rmax",
        "0.2",
        "--rsteps",
        "20",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    assert!((rows[0][0] - 0.01).abs() < 1e-15 && rows[19][0] == 0.2);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
}

#[test]
fn envelope_is_ordered_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = simulate_to(dir.path(), "pts.csv", "11");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let mut args = vec![
            "envelope",
            "--input",
            data.to_str().unwrap(),
            "--nsim",
            "2",
            "--seed",
            "3",
            "--rsteps",
            "64",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(MODEL);
        ok(&args);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = csv_rows(&a);
    assert_eq!(rows[0], ["r", "lo", "mean", "hi", "data"]);
    for row in &rows[1..] {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[2] && v[2] <= v[3]);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = simulate_to(dir.path(), "pts.csv", "12");
    let outputs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let mut args = vec![
                "envelope",
                "--input",
                data.to_str().unwrap(),
                "--nsim",
                "4",
                "--rsteps",
                "32",
                "--jobs",
                jobs,
            ];
            args.extend_from_slice(MODEL);
            ok(&args).stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

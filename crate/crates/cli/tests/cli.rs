use std::path::Path;
use std::process::{Command, Output};

use optomech_cli::table::read_table;
use tempfile::TempDir;

fn optomech(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optomech"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn sweep_is_byte_reproducible_and_reruns_from_its_header() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    let rerun = dir.path().join("rerun.csv");
    let args = ["sweep", "--grid", "-1:1:21", "--omega", "0.005"];
    for out in [&first, &second] {
        let o = optomech(&[&args[..], &["--out", path_str(out)]].concat());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(&first).unwrap();
    assert_eq!(a, std::fs::read(&second).unwrap());

    let o = optomech(&[
        "sweep",
        "--config",
        path_str(&first),
        "--out",
        path_str(&rerun),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(a, std::fs::read(&rerun).unwrap());

    let t = read_table(&first).unwrap();
    assert_eq!(t.rows.len(), 21);
    assert_eq!(t.columns[0], "delta_over_g");
    assert_eq!(t.header.run.omega, 0.005);
    assert_eq!(t.header.diagnostics["failed_points"].as_integer(), Some(0));
    let g2 = t.column("g2_aa").unwrap();
    // symmetric in detuning
    for (x, y) in g2.iter().zip(g2.iter().rev()) {
        assert!((x - y).abs() <= 1e-9 * x.abs());
    }
}

#[test]
fn stdout_output_matches_file_output() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("t.csv");
    let args = ["tau", "--tau-max", "2", "--pair", "as"];
    let o = optomech(&args);
    assert_eq!(code(&o), 0);
    let o2 = optomech(&[&args[..], &["--out", path_str(&file)]].concat());
    assert_eq!(code(&o2), 0);
    assert_eq!(o.stdout, std::fs::read(&file).unwrap());
}

#[test]
fn weak_drive_guard() {
    let o = optomech(&["sweep", "--omega", "0.5", "--grid", "0:0.5:3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("allow-strong-drive"));
    let o = optomech(&[
        "sweep",
        "--omega",
        "0.5",
        "--grid",
        "0:0.5:3",
        "--allow-strong-drive",
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn rejected_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.csv");
    for args in [
        &["sweep", "--grid", "1:0:5"][..],
        &["sweep", "--gamma", "-1"],
        &["tau", "--pair", "xy"],
        &["tau", "--pair", "RR", "--with-analytic"],
        &["sweep", "--with-analytic", "--grid", "0:1:3"],
        &["sweep", "--dims", "4,4"],
        &["thermal", "--nth", "0"],
    ] {
        let o = optomech(args);
        assert_eq!(
            code(&o),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = optomech(&["sweep", "--grid", "0:1:3", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0);
    let o = optomech(&["tau", "--config", path_str(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_model_is_a_total_failure() {
    // no coupling and no phonon damping: the steady state is not unique
    let o = optomech(&["sweep", "--g", "0", "--gamma", "0", "--grid", "-1:1:3"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analytic_companion_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("thermal.csv");
    let o = optomech(&[
        "thermal",
        "--nth",
        "0.5",
        "--gamma",
        "0.05",
        "--grid",
        "-1:1:5",
        "--with-analytic",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let numeric = read_table(&out).unwrap();
    let analytic = read_table(&dir.path().join("thermal.analytic.csv")).unwrap();
    assert_eq!(numeric.header.source, "numeric");
    assert_eq!(analytic.header.source, "analytic");
    assert_eq!(
        numeric.header.run.dims,
        Some(optomech::model::default_dims(0.5))
    );
    assert_eq!(numeric.columns, analytic.columns);

    let tau = dir.path().join("tau.csv");
    let o = optomech(&[
        "tau",
        "--tau-max",
        "3",
        "--with-analytic",
        "--out",
        path_str(&tau),
    ]);
    assert_eq!(code(&o), 0);
    let t = read_table(&tau).unwrap();
    let (num, ana) = (t.column("g2").unwrap(), t.column("g2_analytic").unwrap());
    assert!((num[0] - ana[0]).abs() <= 0.05 * ana[0]);
}

#[test]
fn compare_reports_agreement() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.csv");
    let o = optomech(&["compare", "--grid", "-1:1:41", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_table(&out).unwrap();
    assert!(t.column("agrees").unwrap().iter().all(|v| *v == 1.0));
    assert_eq!(
        t.header.diagnostics["disagreeing_points"].as_integer(),
        Some(0)
    );

    // far outside the weak-drive regime the two routes part ways
    let o = optomech(&[
        "compare",
        "--grid",
        "-1:1:11",
        "--omega",
        "0.05",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside tolerance"));
}

#[test]
fn validate_flags_a_too_small_truncation() {
    let o = optomech(&["validate", "--dims", "2,2,2", "--omega", "0.002"]);
    assert_eq!(code(&o), 2);
    let report = String::from_utf8_lossy(&o.stderr);
    assert!(
        report
            .lines()
            .any(|l| l.starts_with("FAIL") && l.contains("truncation_stability")),
        "{report}"
    );
    assert!(report.contains("failed invariants"));
}

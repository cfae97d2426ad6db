use std::path::Path;
use std::process::{Command, Output};

fn hemiray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemiray"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn validate_default_passes_every_check() {
    let o = hemiray(&["validate"]);
    let text = stdout(&o);
    assert_eq!(code(&o), 0, "{text}");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# hemiray v1");
    assert_eq!(lines[1], "check,value,tolerance,pass");
    let names: Vec<&str> = lines[2..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["santalo", "duality", "measure", "quasimode-norm"]);
    assert!(lines[2..].iter().all(|l| l.ends_with(",true")));
}

#[test]
fn coarse_grid_fails_validation() {
    let o = hemiray(&["validate", "--grid", "16"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains(",false"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("santalo"));
}

#[test]
fn only_filters_to_one_row() {
    let o = hemiray(&["validate", "--only", "santalo", "--grid", "64"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("santalo,"));
}

#[test]
fn bad_usage_exits_64() {
    assert_eq!(code(&hemiray(&["validate", "--only", "nonsense"])), 64);
    assert_eq!(code(&hemiray(&["frobnicate"])), 64);
    assert_eq!(code(&hemiray(&["roundtrip", "--lambda", "-1"])), 64);
    assert_eq!(code(&hemiray(&["sweep", "lemma", "--sigma", "2"])), 64);
    assert_eq!(
        code(&hemiray(&[
            "reconstruct",
            "--input",
            "/nonexistent/data.csv"
        ])),
        64
    );
    assert_eq!(code(&hemiray(&["--help"])), 0);
}

#[test]
fn roundtrip_recovers_default_phantom() {
    let o = hemiray(&["roundtrip", "--grid", "128", "--angles", "180"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let row: Vec<f64> = text
        .lines()
        .nth(2)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(row[3] < 0.05, "{text}");
}

#[test]
fn strong_attenuation_diverges_with_exit_2() {
    let o = hemiray(&[
        "roundtrip",
        "--grid",
        "64",
        "--angles",
        "90",
        "--lambda",
        "5",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_phantom_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"phantoms": [], "grid": 64, "angles": 90}"#).unwrap();
    let o = hemiray(&["roundtrip", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let row = stdout(&o).lines().nth(2).unwrap().to_string();
    assert_eq!(row.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn config_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"grid": 16}"#).unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(
        code(&hemiray(&["validate", "--only", "santalo", "--config", c])),
        1
    );
    assert_eq!(
        code(&hemiray(&[
            "validate", "--only", "santalo", "--config", c, "--grid", "64"
        ])),
        0
    );
    std::fs::write(&cfg, r#"{"gird": 16}"#).unwrap();
    assert_eq!(code(&hemiray(&["validate", "--config", c])), 64);
}

fn run_to(path: &Path, args: &[&str]) -> Vec<u8> {
    let mut all = args.to_vec();
    all.extend(["--out", path.to_str().unwrap()]);
    assert_eq!(code(&hemiray(&all)), 0, "{all:?}");
    std::fs::read(path).unwrap()
}

#[test]
fn stability_sweep_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "stability",
        "--grid",
        "32",
        "--angles",
        "60",
        "--lambda",
        "0,0.05,0.1",
        "--noise",
        "0,0.01",
        "--seed",
        "5",
    ];
    let a = run_to(&dir.path().join("a.csv"), &args);
    let mut single = args.to_vec();
    single.extend(["--threads", "1"]);
    let b = run_to(&dir.path().join("b.csv"), &single);
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "lambda,noise,ratio,err");
    assert_eq!(text.lines().count(), 2 + 3 * 2);
}

#[test]
fn lemma_sweep_reports_the_slope() {
    let o = hemiray(&["sweep", "lemma", "--sigma", "0.25,0.5"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "slope").unwrap();
    for line in text.lines().skip(2) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let want = -v[1] / (3.0 + 3.0 * v[1]);
        assert!(((v[col] - want) / want).abs() < 0.05, "{line}");
    }
}

#[test]
fn forward_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rays.csv");
    run_to(&data, &["forward", "--angles", "120", "--lambda", "0.05"]);
    let rec = run_to(
        &dir.path().join("rec.csv"),
        &[
            "reconstruct",
            "--input",
            data.to_str().unwrap(),
            "--grid",
            "64",
            "--angles",
            "120",
        ],
    );
    let text = String::from_utf8(rec).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "theta,psi,value");
    let peak = text
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(peak > 0.5, "peak {peak}");
}

#[test]
fn calibrate_emits_json() {
    let o = hemiray(&["calibrate", "--grid", "128", "--angles", "180"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c = v["c_hat"].as_f64().unwrap();
    assert!((c - 4.0 * std::f64::consts::PI).abs() < 0.05, "{c}");
}

#[test]
fn lemma_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"bumps": 50}"#).unwrap();
    let o = hemiray(&["lemma-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

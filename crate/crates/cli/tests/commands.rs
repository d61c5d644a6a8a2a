use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const WORKED: &str = r#"{
  "space": { "n": 2 },
  "process": { "variant": "superposition", "components": [
    { "variant": "poisson", "nu": [1, 2] },
    { "variant": "determinantal", "K": [[0.5, 0.25], [0.25, 0.5]] }
  ] }
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pgf-disentangle"));
    c.env("PGF_DISENTANGLE_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exact_worked_example_recovers_both_laws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let out = tmp.path().join("run");
    let o = run(&["experiment", "--config", s(&cfg), "--seed", "7", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("overall: PASS"));

    let result: Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    let nu: Vec<f64> = serde_json::from_value(result["recovered_nu"].clone()).unwrap();
    assert!((nu[0] - 1.0).abs() < 1e-10 && (nu[1] - 2.0).abs() < 1e-10, "{nu:?}");
    let minors = result["principal_minors"].as_array().unwrap();
    let want = [0.5, 0.5, 0.1875];
    assert_eq!(minors.len(), 3);
    for (m, w) in minors.iter().zip(want) {
        let re = m["value"]["re"].as_f64().or_else(|| m["value"][0].as_f64()).unwrap();
        assert!((re - w).abs() < 1e-10, "{m}");
    }
    for f in ["pgf.csv", "zeros.csv", "result.json", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let zeros = fs::read_to_string(out.join("zeros.csv")).unwrap();
    let re: Vec<f64> = zeros.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(re.len(), 2);
    assert!(re.iter().any(|x| (x + 4.0 / 3.0).abs() < 1e-9) && re.iter().any(|x| (x + 4.0).abs() < 1e-9));
}

#[test]
fn tiny_empirical_run_flags_wide_uncertainty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let out = tmp.path().join("run");
    let o = run(&["experiment", "--config", s(&cfg), "--mode", "empirical", "--samples", "10", "--seed", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("WIDE UNCERTAINTY"));
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap().lines().count(), 11);
}

#[test]
fn malformed_config_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", "{ \"space\": {\"n\": 2},\n  \"process\": {\"variant\": \"poisson\", \"nu\": [1, 2}\n}");
    let o = run(&["experiment", "--config", s(&cfg), "--seed", "1", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let cfg = write(tmp.path(), "neg.json", r#"{ "space": {"n": 1}, "process": {"variant": "poisson", "nu": [-1]} }"#);
    let o = run(&["disentangle", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("process.nu"));
}

#[test]
fn missing_seed_and_unknown_tolerance_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let o = run(&["experiment", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["disentangle", "--config", s(&cfg), "--tolerance", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--config", s(&cfg), "--seed", "1", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let blocker = write(tmp.path(), "file", "");
    let o = run(&["experiment", "--config", s(&cfg), "--seed", "1", "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exceeded_tolerance_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let o = run(&[
        "experiment", "--config", s(&cfg), "--mode", "empirical", "--samples", "500", "--seed", "1",
        "--checks", "--tolerance", "sigmas=1e-9", "--out", s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("overall: FAIL"));
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for (d, threads) in dirs.iter().zip(["1", "4"]) {
        let o = bin()
            .env("PGF_DISENTANGLE_THREADS", threads)
            .args(["experiment", "--config", s(&cfg), "--mode", "empirical", "--samples", "2000", "--seed", "11"])
            .args(["--out", s(d)])
            .output()
            .unwrap();
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["samples.csv", "pgf.csv", "zeros.csv", "result.json", "summary.txt"] {
        let a = fs::read(dirs[0].join(f)).unwrap();
        let b = fs::read(dirs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn simulate_pgf_zeros_and_disentangle_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "model.json", WORKED);
    let o = run(&["simulate", "--config", s(&cfg), "--seed", "5", "--samples", "20000"]);
    assert_eq!(o.status.code(), Some(0));
    let batch = write(tmp.path(), "samples.csv", &String::from_utf8(o.stdout).unwrap());

    let point = |args: &[&str]| -> Vec<f64> {
        let o = run(args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        assert_eq!(text.lines().next(), Some("z_re,z_im,B_re,B_im,stderr"));
        text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect()
    };
    let exact = (-1.5f64).exp() * (1.0 - 0.5 * 0.75) * (1.0 - 0.5 * 0.25);
    let row = point(&["pgf", "--config", s(&cfg), "--phi", "-1,-1", "--z-grid", "0.5:0.5:1,0:0:1"]);
    assert!((row[2] - exact).abs() < 1e-14 && row[4] == 0.0, "{row:?}");
    let row = point(&["pgf", "--batch", s(&batch), "--phi", "-0.5,-0.5", "--z-grid", "1:1:1,0:0:1"]);
    assert!((row[2] - exact).abs() < 5.0 * row[4], "{row:?}");

    let o = run(&["pgf", "--config", s(&cfg)]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 61 * 41);

    let o = run(&["zeros", "--config", s(&cfg), "--phi", "1,0"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let re: f64 = text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((re + 2.0).abs() < 1e-9, "{text}");

    let o = run(&["disentangle", "--batch", s(&batch), "--uncertainty", "delta"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let result: Value = serde_json::from_slice(&o.stdout).unwrap();
    let nu: Vec<f64> = serde_json::from_value(result["recovered_nu"].clone()).unwrap();
    let se: Vec<f64> = serde_json::from_value(result["nu_stderr"].clone()).unwrap();
    for (i, truth) in [1.0, 2.0].into_iter().enumerate() {
        assert!((nu[i] - truth).abs() < 5.0 * se[i], "{nu:?} +- {se:?}");
    }

    let mismatched = write(tmp.path(), "m.csv", "p,q\n1,0\n");
    let o = run(&["disentangle", "--config", s(&cfg), "--batch", s(&mismatched), "--mode", "empirical"]);
    assert_eq!(o.status.code(), Some(2));
}

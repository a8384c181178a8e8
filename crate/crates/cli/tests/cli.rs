use std::process::{Command, Output};

use serde_json::Value;

const LN2: f64 = std::f64::consts::LN_2;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bohl-spectra"))
        .args(args)
        .args(["--threads", "1"])
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn intervals(v: &Value) -> Vec<(f64, f64)> {
    v["intervals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| (i[0].as_f64().unwrap(), i[1].as_f64().unwrap()))
        .collect()
}

fn dims(v: &Value) -> Vec<u64> {
    v["filtration_dims"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).collect()
}

#[test]
fn constant_scalar_spectrum() {
    let v = json(&["spectrum", "--kind", "ed", "--gen", "constant", "--matrix", "2", "--horizon", "4000"]);
    let iv = intervals(&v);
    assert_eq!(iv.len(), 1);
    assert!((iv[0].0 - LN2).abs() < 1e-12 && (iv[0].1 - LN2).abs() < 1e-12);
    assert_eq!(dims(&v), vec![0, 1]);
}

#[test]
fn periodic_scalar_spectrum() {
    let v = json(&["spectrum", "--kind", "ed", "--gen", "periodic", "--matrices", "1;4", "--horizon", "8000"]);
    let iv = intervals(&v);
    assert_eq!(iv.len(), 1);
    assert!((iv[0].0 - LN2).abs() < 1e-3 && (iv[0].1 - LN2).abs() < 1e-3, "{iv:?}");
}

#[test]
fn diagonal_spectra_and_classification() {
    let common = ["--gen", "diag", "--entries", "2,0.5", "--horizon", "4000"];
    for kind in ["ed", "bd", "bohl"] {
        let mut args = vec!["spectrum", "--kind", kind];
        args.extend(common);
        let v = json(&args);
        let iv = intervals(&v);
        assert_eq!(iv.len(), 2, "{kind}: {iv:?}");
        assert!((iv[0].0 + LN2).abs() < 1e-2 && (iv[1].1 - LN2).abs() < 1e-2, "{kind}: {iv:?}");
        assert_eq!(dims(&v), vec![0, 1, 2]);
    }

    let mut args = vec!["classify", "--gamma", "0", "--mode", "ed"];
    args.extend(common);
    let v = json(&args);
    assert_eq!(v["verdict"], "resolvent");

    let mut args = vec!["classify", "--gamma", "0.6931471805599453", "--mode", "bd"];
    args.extend(common);
    let v = json(&args);
    assert_eq!(v["verdict"], "spectrum");
}

#[test]
fn direction_exponents_in_both_formats() {
    let common = ["exponents", "--direction", "1,1", "--gen", "diag", "--entries", "2,0.5", "--horizon", "4000"];
    let v = json(&common);
    assert!((v["upper"].as_f64().unwrap() - LN2).abs() < 1e-2);
    assert!((v["lower"].as_f64().unwrap() - LN2).abs() < 1e-2);

    let mut args = common.to_vec();
    args.extend(["--format", "csv"]);
    let out = run(&args);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("threshold,sup_value,inf_value"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.len() == 3));
    assert_eq!(rows.last().unwrap()[0], 500.0);
}

#[test]
fn classify_csv_is_a_trace() {
    let out = run(&[
        "classify", "--gamma", "0", "--mode", "bd", "--gen", "diag", "--entries", "2,0.5",
        "--horizon", "4000", "--format", "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("gamma,verdict"), "{header}");
    assert!(text.lines().count() > 2);
}

#[test]
fn triangular_form_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b_path = dir.path().join("b.json");
    let t_path = dir.path().join("t.json");
    let h = "4000";
    let system = ["--gen", "random-qdq", "--dim", "2", "--horizon", h];

    let mut args = vec!["triangularize", "-o", b_path.to_str().unwrap(), "--with-t", t_path.to_str().unwrap()];
    args.extend(system);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));

    let b: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(&b_path).unwrap()).unwrap();
    assert_eq!(b.len(), 4000);
    // row-major 2 × 2, upper triangular with positive diagonal
    assert!(b.iter().all(|m| m[2] == 0.0 && m[0] > 0.0 && m[3] > 0.0));
    assert!(t_path.exists());

    let mut args = vec!["spectrum", "--kind", "ed"];
    args.extend(system);
    let original = json(&args);
    let reloaded = json(&[
        "spectrum", "--kind", "ed", "--gen", "file", "--dim", "2", "--path", b_path.to_str().unwrap(),
        "--horizon", h,
    ]);
    let (a, r) = (intervals(&original), intervals(&reloaded));
    assert_eq!(a.len(), r.len(), "{a:?} vs {r:?}");
    for (x, y) in a.iter().zip(&r) {
        assert!((x.0 - y.0).abs() <= 2e-2 && (x.1 - y.1).abs() <= 2e-2, "{a:?} vs {r:?}");
    }
}

#[test]
fn validate_reports_bounds() {
    let v = json(&["validate", "--gen", "constant", "--matrix", "2,0,0,0.5", "--horizon", "100"]);
    let text = v.to_string();
    assert!(text.contains("norm"), "{text}");
}

#[test]
fn usage_errors_exit_with_two() {
    let cases: [&[&str]; 5] = [
        &["spectrum", "--kind", "ed"],
        &["spectrum", "--kind", "nope", "--gen", "dyadic"],
        &["spectrum", "--kind", "ed", "--gen", "constant", "--matrix", "1,2,3"],
        &["spectrum", "--kind", "ed", "--gen", "dyadic", "--grid-tol", "-1"],
        &["exponents", "--direction", "1,0", "--gen", "dyadic", "--horizon", "100"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn computation_errors_exit_with_one() {
    // singular factor
    let out = run(&["spectrum", "--kind", "ed", "--gen", "constant", "--matrix", "1,1,1,1", "--horizon", "100"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["spectrum", "--kind", "ed", "--spec", "/nonexistent/spec.json"]);
    assert_eq!(out.status.code(), Some(1));
}

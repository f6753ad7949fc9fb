use std::path::PathBuf;
use std::process::{Command, Output};

fn geodensity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geodensity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("geodensity-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// `(value, err)` from an `eval` text line.
fn value_and_err(line: &str) -> (f64, f64) {
    let f: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(f[0], "p=");
    assert_eq!(f[2], "err=");
    assert_eq!(f[4], "n_used=");
    (f[1].parse().unwrap(), f[3].parse().unwrap())
}

#[test]
fn eval_prints_one_line() {
    let o = geodensity(&["eval", "--h", "0.5", "--x", "0", "--t", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    let (v, err) = value_and_err(out.trim());
    assert!((v - 0.302_469_7).abs() < 1e-6, "{v}");
    assert!(err > 0.0 && err < 1e-4);
}

#[test]
fn eval_symmetric_in_x() {
    let a = geodensity(&["eval", "--h", "0.5", "--x", "0.7", "--t", "1"]);
    let b = geodensity(&["eval", "--h", "0.5", "--x", "-0.7", "--t", "1"]);
    let (va, ea) = value_and_err(stdout(&a).trim());
    let (vb, eb) = value_and_err(stdout(&b).trim());
    assert!((va - vb).abs() <= ea + eb, "{va} vs {vb}");
}

#[test]
fn eval_rejects_nonpositive_t() {
    let o = geodensity(&["eval", "--h", "0.5", "--x", "0", "--t", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t must be positive"));
}

#[test]
fn eval_json_schema() {
    let o = geodensity(&["eval", "--h", "1", "--x", "0.5", "--t", "1", "--density", "phat", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
    assert!(v["err_estimate"].is_number());
    let terms = v["terms"].as_array().unwrap();
    assert_eq!(terms.len() as u64, v["n_used"].as_u64().unwrap());
    assert!(terms[0]["re"].is_number() && terms[0]["im"].is_number());
    assert_eq!(v["config"]["nodes_per_leg"], 32);
}

#[test]
fn eval_is_deterministic() {
    let args = ["eval", "--h", "-0.5", "--x", "0.3", "--t", "0.7", "--json"];
    assert_eq!(geodensity(&args).stdout, geodensity(&args).stdout);
}

#[test]
fn config_file_supplies_and_flags_override() {
    let path = scratch("point.cfg");
    std::fs::write(&path, "# point\nh = 0.5\nx = 0\nt = 1\nnodes = 24\n").unwrap();
    let cfg = path.to_str().unwrap();
    let a = geodensity(&["--config", cfg, "eval", "--json"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["config"]["nodes_per_leg"], 24);
    let b = geodensity(&["--config", cfg, "eval", "--json", "--nodes", "20"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&b)).unwrap();
    assert_eq!(v["config"]["nodes_per_leg"], 20);
}

#[test]
fn grid_writes_csv() {
    let path = scratch("grid.csv");
    let o = geodensity(&[
        "grid", "--h-range", "-0.5:1.5:3", "--x-range", "-1:1:3", "--t", "1", "--out", path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[0], "h,x,t,p,p_hat,err_p,err_phat,n_used");
    assert!(!text.contains('\r'));
    let rows: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    // h-major order.
    assert_eq!(rows[0][0], -0.5);
    assert_eq!(rows[1][0], -0.5);
    assert_eq!(rows[3][0], 0.5);
    // Mirrored columns agree within the error estimates.
    for h in 0..3 {
        let (a, b) = (&rows[3 * h], &rows[3 * h + 2]);
        assert!((a[3] - b[3]).abs() <= a[5] + b[5]);
        assert!((a[4] - b[4]).abs() <= a[6] + b[6]);
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("argmax_h"));
}

#[test]
fn grid_reports_unwritable_path() {
    let o = geodensity(&[
        "grid", "--h-range", "0:1:1", "--x-range", "0:0:1", "--t", "1", "--out", "/nonexistent/dir/grid.csv",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn validate_rejects_unknown_suite() {
    let o = geodensity(&["validate", "--suite", "medium"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prelimit_rejects_small_l() {
    let o = geodensity(&["prelimit", "--h", "0.5", "--x", "0", "--t", "1", "--L", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prelimit_json() {
    let o = geodensity(&["prelimit", "--h", "0.5", "--x", "0", "--t", "1", "--L", "16", "--nodes", "16", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["ratio"].as_f64().unwrap() > 0.2);
    assert!(v["rel_gap"].as_f64().unwrap() < 0.1);
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_geodensity"))
        .args(["eval", "--h", "0.5", "--x", "0", "--t", "1"])
        .env("GEODENSITY_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_geodensity"))
        .args(["eval", "--h", "0.5", "--x", "0", "--t", "1"])
        .env("GEODENSITY_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}

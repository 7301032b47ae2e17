use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn convid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("stderr is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let out = out.to_str().unwrap().to_string();
    let mut args = vec!["simulate", "--out", &out];
    args.extend_from_slice(extra);
    let o = convid(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_is_deterministic_for_every_model() {
    let dir = tempfile::tempdir().unwrap();
    let models: [&[&str]; 3] = [
        &["--model", "example1", "--n", "500", "--seed", "4"],
        &["--model", "example2", "--n", "500", "--seed", "4", "--regression", "step:0", "--uy", "gauss:0:0.1"],
        &["--model", "example3", "--n", "500", "--seed", "4", "--ux", "gauss:0:0.5"],
    ];
    for (k, extra) in models.iter().enumerate() {
        let a = simulate(dir.path(), &format!("a{k}.csv"), extra);
        let b = simulate(dir.path(), &format!("b{k}.csv"), extra);
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let (sa, sb) = (read_json(&Path::new(&a).with_extension("json")), read_json(&Path::new(&b).with_extension("json")));
        assert_eq!(sa["spec"], sb["spec"]);
        assert_eq!(sa["provenance"]["config_hash"].as_str().map(str::len), Some(64));
    }
    let c = simulate(dir.path(), "c.csv", &["--n", "500", "--seed", "5"]);
    assert_ne!(fs::read(dir.path().join("a0.csv")).unwrap(), fs::read(c).unwrap());
}

#[test]
fn example2_without_y_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "s.csv", &["--n", "200"]);
    let out = dir.path().join("sol");
    let o = convid(&["estimate", "--in", &csv, "--model", "example2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "config");
    assert_eq!(e["error"]["code"], 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 3, "no_such_key": 1}"#).unwrap();
    let out = dir.path().join("s.csv");
    let o = convid(&["--config", cfg.to_str().unwrap(), "simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("no_such_key"));

    fs::write(&cfg, "[1, 2]").unwrap();
    let o = convid(&["--config", cfg.to_str().unwrap(), "simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"n": 300, "z-law": "gauss:0:2"}"#).unwrap();
    let out = dir.path().join("s.csv");
    let o = convid(&["--config", cfg.to_str().unwrap(), "simulate", "--n", "50", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["n"], 300);
    assert_eq!(read_json(&out.with_extension("json"))["provenance"]["config"]["sim"]["z_law"], "gauss:0:2");
}

#[test]
fn regularized_estimate_writes_manifest_and_truth_distances() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "s.csv", &["--n", "5000", "--seed", "1"]);
    let out = dir.path().join("sol");
    let o = convid(&["estimate", "--in", &csv, "--reg", "5:raised_cosine", "--case", "a", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary, read_json(&out.join("summary.json")));
    let l1 = summary["truth"]["l1"].as_f64().unwrap();
    assert!(l1 > 0.0 && l1 < 0.3, "{l1}");

    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["weight"]["cutoff"], 5.0);
    assert_eq!(m["case"], "a");
    assert_eq!(m["provenance"]["command"], "estimate");
    for f in ["gamma", "phi", "mask", "g_real"] {
        assert!(out.join(format!("{f}.json")).exists(), "{f}");
        assert!(out.join(format!("{f}.csv")).exists(), "{f}");
    }
}

#[test]
fn bad_estimator_settings_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "s.csv", &["--n", "200"]);
    let out = dir.path().join("sol");
    let out = out.to_str().unwrap();
    for bad in [
        &["--case", "c"][..],
        &["--tau", "-1"],
        &["--reg", "0:bump"],
        &["--grid", "-1:1"],
        &["--cleanup", "wild"],
    ] {
        let mut args = vec!["estimate", "--in", &csv, "--out", out];
        args.extend_from_slice(bad);
        assert_eq!(convid(&args).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn montecarlo_summarises_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let o = convid(&[
        "--workers", "2", "montecarlo", "--n", "2000", "--trials", "3", "--reg", "4:bump", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["trials"], 3);
    assert_eq!(s["failures"], 0);
    assert!(s["median_l1"].as_f64().unwrap() > 0.0);
    let rows = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
}

#[test]
fn diagnose_gaussian_family() {
    let verdict = |lambda: &str| {
        let class = format!("2:10:1:{lambda}");
        let o = convid(&["diagnose", "--family", "gauss:0:1", "--class", &class, "--r0", "10"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout_json(&o)["diagnosis"]["verdict"].as_str().unwrap().to_string()
    };
    assert_eq!(verdict("0.5"), "member");
    assert_eq!(verdict("0.55"), "nonmember");
    assert_eq!(verdict("0.45"), "nonmember");
}

#[test]
fn diagnose_needs_exactly_one_input() {
    let o = convid(&["diagnose", "--class", "2:10:1:0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = convid(&["diagnose", "--family", "gauss:0:1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn illposed_demo_tabulates_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let o = convid(&["illposed-demo", "--n-max", "6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout_json(&o);
    assert_eq!(r["all_bounds_hold"], true);
    assert_eq!(r["rows"].as_array().unwrap().len(), 5);
    let csv = fs::read_to_string(out.join("illposed.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(convid(&["illposed-demo", "--n-min", "1"]).status.code(), Some(2));
}

#[test]
fn bad_flags_exit_with_config_code() {
    assert_eq!(convid(&["simulate", "--n", "many"]).status.code(), Some(2));
    assert_eq!(convid(&["frobnicate"]).status.code(), Some(2));
}

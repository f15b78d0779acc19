use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_glmm-mispredict"));
    c.env_remove("GLMM_MISPREDICT_THREADS");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

#[test]
fn scenario_catalog_is_large() {
    let out = run(&["scenarios"], Path::new("."));
    assert!(out.status.success());
    let names = String::from_utf8(out.stdout).unwrap();
    assert!(names.lines().count() >= 30);
    assert!(names.lines().any(|l| l == "table2:poisson:distI:m50:n5"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["fit", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["fit", "--data", "x.csv", "--family", "binomial"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "scenarios"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn computation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = run(&["fit", "--data", "empty.csv", "--family", "poisson"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = run(&["simulate", "--scenario", "no-such-scenario", "--reps", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("table2:poisson"));
    std::fs::write(dir.path().join("bad.csv"), "cluster,y,x:a\nc,1,2\nc,oops,2\n").unwrap();
    let out = run(&["fit", "--data", "bad.csv", "--family", "poisson", "--intercept"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--scenario", "tableS1:lmm:distI:m25:n5", "--reps", "3", "--seed", "7"];
    let a = run(&[&args[..], &["--threads", "1", "--out", "a.ndjson"]].concat(), dir.path());
    let b = run(&[&args[..], &["--threads", "1", "--out", "b.ndjson"]].concat(), dir.path());
    let c = bin().args(args).args(["--out", "c.ndjson"]).env("GLMM_MISPREDICT_THREADS", "3").current_dir(dir.path()).output().unwrap();
    assert!(a.status.success() && b.status.success() && c.status.success());
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.ndjson"), read("b.ndjson"));
    assert_eq!(read("a.ndjson"), read("c.ndjson"));
    let text = String::from_utf8(read("a.ndjson")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3 * 2 + 2);
    assert!(rows[0].get("umsep").is_some() && rows[0].get("rep").is_some() && rows[0].get("config").is_some());
    assert_eq!(rows.last().unwrap()["summary"], true);
    assert!(rows.last().unwrap()["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = run(args, d);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["generate", "--scenario", "normal:lmm:m200:n7", "--out", "d.csv", "--truth", "t.csv", "--seed", "5"]);
    ok(&["fit", "--data", "d.csv", "--family", "gaussian", "--out", "m.json"]);
    ok(&["predict", "--model", "m.json", "--data", "d.csv", "--out", "p.csv"]);
    ok(&["msep", "--model", "m.json", "--data", "d.csv", "--bootstrap", "50", "--out", "ms.csv"]);
    ok(&[
        "intervals", "--predictions", "p.csv", "--msep", "ms.csv", "--truth", "t.csv", "--out", "i.csv",
        "--coverage-out", "cov.json",
    ]);
    ok(&["diagnose", "--model", "m.json", "--data", "d.csv", "--out-dir", "diag"]);

    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(model["version"], 1);
    assert_eq!(model["mixture"]["weights"].as_array().unwrap().len(), 1);
    assert_eq!(std::fs::read_to_string(d.join("p.csv")).unwrap().lines().count(), 201);
    let cov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cov.json")).unwrap()).unwrap();
    let marginal = cov["coverage_marginal"].as_f64().unwrap();
    assert!(marginal > 0.85 && marginal <= 1.0, "{marginal}");
    for f in ["qq.csv", "density.csv", "shapiro.json"] {
        assert!(d.join("diag").join(f).exists());
    }
}

#[test]
fn scenario_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let json = run(&["scenarios", "--json"], dir.path());
    let all: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let mut s = all.as_array().unwrap().iter().find(|s| s["name"] == "tableS1:lmm:distII:m25:n5").unwrap().clone();
    s["m"] = 10.into();
    std::fs::write(dir.path().join("s.json"), s.to_string()).unwrap();
    let o = run(&["generate", "--scenario", "s.json", "--out", "d.csv"], dir.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 * 5);
}

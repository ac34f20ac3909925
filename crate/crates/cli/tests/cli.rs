use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pmcausal"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pdx_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pdx")
}

const FOUR_UNIT_STUDY: &str = r#"{
    "name": "four units",
    "covariates": [{"name": "C", "type": "binary"}],
    "arms": {"control": ["k0"], "treated": ["k1"]},
    "algorithm": [{"when": {}, "recommend": "k1"}],
    "estimation": {
        "outcome_model": {"type": "glm", "formula": ["K", "C", ["K", "C"]]},
        "treatment_model": {"type": "glm", "formula": ["C"]}
    }
}"#;

const FOUR_UNIT_COHORT: &str = "unit_id,C,arm,version,outcome\nu0,0,1,k1,2\nu1,0,0,k0,0\nu2,1,1,k1,4\nu3,1,0,k0,2\n";

fn four_unit_files(dir: &Path) -> (String, String) {
    let study = dir.join("study.json");
    let cohort = dir.join("cohort.csv");
    std::fs::write(&study, FOUR_UNIT_STUDY).unwrap();
    std::fs::write(&cohort, FOUR_UNIT_COHORT).unwrap();
    (cohort.display().to_string(), study.display().to_string())
}

#[test]
fn estimate_four_unit_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (cohort, study) = four_unit_files(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "estimate",
        "--cohort",
        &cohort,
        "--study",
        &study,
        "--methods",
        "naive,std,ipw,tmle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_units"], 4);
    for e in ["CE1", "CE2", "CE3"] {
        assert_eq!(report["estimates"][e].as_object().unwrap().len(), 4, "{e}");
    }
    // Y(k1) - Y(k0) is 2 in both strata.
    for m in ["std", "ipw", "tmle"] {
        let effect = report["estimates"]["CE1"][m]["effect"].as_f64().unwrap();
        assert!((effect - 2.0).abs() < 1e-6, "{m}: {effect}");
    }
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("CE1      std"));
}

#[test]
fn estimate_oracle_needs_counterfactuals() {
    let dir = tempfile::tempdir().unwrap();
    let (cohort, study) = four_unit_files(dir.path());
    let o = run(&["estimate", "--cohort", &cohort, "--study", &study, "--methods", "true,std", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("counterfactual"));
}

#[test]
fn estimate_schema_mismatch_is_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let (_, study) = four_unit_files(dir.path());
    let cohort = dir.path().join("bad.csv");
    std::fs::write(&cohort, "unit_id,arm,version,outcome\nu0,1,k1,2\n").unwrap();
    let o = run(&["estimate", "--cohort", cohort.to_str().unwrap(), "--study", &study]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing covariate column C"));
}

#[test]
fn estimate_empty_eligible_set() {
    let dir = tempfile::tempdir().unwrap();
    let (cohort, _) = four_unit_files(dir.path());
    let study = dir.path().join("narrow.json");
    std::fs::write(&study, FOUR_UNIT_STUDY.replace(r#""when": {}"#, r#""when": {"C": 5}"#)).unwrap();
    let o = run(&["estimate", "--cohort", &cohort, "--study", study.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate",
            "--preset",
            "main",
            "--replicates",
            "1",
            "--seed",
            "7",
            "--superpop",
            "2000",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(out.join("result.json")).unwrap(),
            std::fs::read(out.join("result.csv")).unwrap(),
            o.stdout,
        )
    };
    let (a, b) = (go("a"), go("b"));
    assert_eq!(a, b);
    let res: Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(res["master_seed"], 7);
    assert_eq!(res["replicates"].as_array().unwrap().len(), 1);
    let table = String::from_utf8(a.2).unwrap();
    for e in ["CE1", "CE2", "CE3"] {
        assert!(table.contains(e));
    }
}

#[test]
fn simulate_missing_coefficient_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: Value = serde_json::from_str(include_str!("../../core/data/scenarios/main.json")).unwrap();
    s["simulation"]["coefficients"].as_object_mut().unwrap().remove("k1_2");
    let path = dir.path().join("s.json");
    std::fs::write(&path, s.to_string()).unwrap();
    let o = run(&["simulate", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k1_2"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn simulate_bad_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, "{\n  \"name\": \"x\",\n  oops\n}").unwrap();
    let o = run(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

fn pdx_result(source_flag: &str, file: &str, out: &Path) -> Value {
    let dir = pdx_fixtures();
    let o = run(&[
        "pdx",
        "--models",
        dir.join("models.csv").to_str().unwrap(),
        source_flag,
        dir.join(file).to_str().unwrap(),
        "--reps",
        "3",
        "--cohort",
        "3",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap()).unwrap()
}

fn assert_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{path}: {x} vs {y}");
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                assert_close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn pdx_volumes_match_responses() {
    let dir = tempfile::tempdir().unwrap();
    let a = pdx_result("--responses", "responses.csv", &dir.path().join("r"));
    let b = pdx_result("--volumes", "volumes.csv", &dir.path().join("v"));
    assert_close(&a, &b, "result");
    assert_eq!(a["n_replicates"], 3);
}

#[test]
fn pdx_cohort_larger_than_eligible() {
    let dir = pdx_fixtures();
    let o = run(&[
        "pdx",
        "--models",
        dir.join("models.csv").to_str().unwrap(),
        "--responses",
        dir.join("responses.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("only 3 eligible"), "{}", stderr(&o));
}

#[test]
fn pdx_load_errors_are_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let resp = dir.path().join("r.csv");
    std::fs::write(&resp, "model_id,drug,best_average_response,responder\nM1,aspirin,1,1\nM9,LEE011,1,1\n").unwrap();
    let o = run(&[
        "pdx",
        "--models",
        pdx_fixtures().join("models.csv").to_str().unwrap(),
        "--responses",
        resp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("unknown drug") && err.contains("unknown model M9"), "{err}");
}

#[test]
fn pdx_synthetic_binary_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "pdx",
        "--synthetic",
        "--outcome",
        "binary",
        "--reps",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let res: Value = serde_json::from_slice(&std::fs::read(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(res["scenario"], "pdx-binary");
    assert_eq!(res["cohort_size"], 70);
}

#[test]
fn pdx_defaults_follow_the_protocol() {
    let help = String::from_utf8(run(&["pdx", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 1000]"), "{help}");
    assert!(help.contains("[default: 70]"));
}

#[test]
fn serve_rejects_invalid_port() {
    for port in ["99999", "http", "-1"] {
        let o = run(&["serve", "--port", port]);
        assert_eq!(o.status.code(), Some(4), "{port}: {}", stderr(&o));
    }
}

#[test]
fn serve_bind_failure() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--port", &port]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn serve_answers_health() {
    let mut child = bin()
        .args(["serve", "--port", "0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(a) = line.strip_prefix("listening on http://") {
            break a.to_string();
        }
    };
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""status":"ok""#));
}

#[test]
fn simulate_through_server_matches_local() {
    let mut child = bin()
        .args(["serve", "--port", "0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let url = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(a) = line.strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str, server: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--preset", "uniform", "--replicates", "2", "--superpop", "1500", "--out"];
        args.push(out.to_str().unwrap());
        if let Some(u) = server {
            args.extend(["--server", u]);
        }
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(out.join("result.json")).unwrap(), o.stdout)
    };
    let remote = go("remote", Some(&url));
    let local = go("local", None);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(remote, local);
}

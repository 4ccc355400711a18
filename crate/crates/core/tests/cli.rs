use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn auxiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auxiv"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn edge<'a>(report: &'a Value, label: &str) -> &'a Value {
    report["edges"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["edge"] == label)
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identify_two_ivs() {
    let out = auxiv(&["identify", path(&fixture("two_ivs.g"))]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["command"], "identify");
    assert_eq!(edge(&r, "x->y")["status"], "identified");
    assert_eq!(edge(&r, "x->y")["round"], 1);
}

#[test]
fn bow_is_reported_unknown() {
    let out = auxiv(&["identify", path(&fixture("bow.g")), "--verify", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(edge(&json(&out), "x->y")["status"], "unknown");
}

#[test]
fn zid_with_gamma() {
    let g = fixture("quasi_iv.g");
    let k = fixture("quasi_iv.known");
    let out = auxiv(&["zid", path(&g), "--known", path(&k), "--verify", "20"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&out);
    assert_eq!(edge(&r, "x->y")["status"], "identified");
    assert_eq!(edge(&r, "z->y")["value"], "?gamma");
    let checks = r["verification"]["edges"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["passed"] == true));
    let out = auxiv(&["identify", path(&g)]);
    assert_eq!(edge(&json(&out), "x->y")["status"], "unknown");
}

#[test]
fn constraints_two_ivs() {
    let out = auxiv(&["constraints", path(&fixture("two_ivs.g"))]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["constraints"].as_array().unwrap().len(), 1);
    assert_eq!(r["constraints"][0]["witness"]["s"], "z2");
}

#[test]
fn check_passes_at_the_model_and_fails_under_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let g = fixture("two_ivs.g");
    let null = dir.path().join("null.csv");
    let out = auxiv(&["simulate", path(&g), "--seed", "4", "--out", path(&null)]);
    assert_eq!(out.status.code(), Some(0));
    let out = auxiv(&["check", path(&g), path(&null)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["violated"], 0);

    let alt_graph = dir.path().join("alt.g");
    let text = std::fs::read_to_string(&g).unwrap() + "z2 -> y\n";
    std::fs::write(&alt_graph, text).unwrap();
    let alt = dir.path().join("alt.csv");
    let out = auxiv(&[
        "simulate",
        path(&alt_graph),
        "--seed",
        "4",
        "--out",
        path(&alt),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = auxiv(&["check", path(&g), path(&alt)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["violated"], 1);
}

#[test]
fn sample_covariance_output_is_accepted_by_check() {
    let dir = tempfile::tempdir().unwrap();
    let g = fixture("two_ivs.g");
    let s = dir.path().join("s.csv");
    let out = auxiv(&[
        "simulate",
        path(&g),
        "--samples",
        "200",
        "--sample-cov",
        "--out",
        path(&s),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = auxiv(&["check", path(&g), path(&s), "--tol", "10"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn check_sep() {
    let g = fixture("two_ivs.g");
    let r = json(&auxiv(&["check-sep", path(&g), "z1", "z2"]));
    assert_eq!(r["separated"], true);
    let r = json(&auxiv(&["check-sep", path(&g), "z1", "y", "--given", "x"]));
    assert_eq!(r["separated"], false);
    // x blocks z1 -> x -> y but opens z1 -> x <-> y
    assert!(r["nearest_separator"].is_null());
}

#[test]
fn errors_exit_one() {
    let out = auxiv(&["identify", "/nonexistent/graph.g"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("c.g");
    std::fs::write(&cyclic, "a -> b\nb -> a\n").unwrap();
    assert_eq!(auxiv(&["identify", path(&cyclic)]).status.code(), Some(1));
    assert_eq!(
        auxiv(&["identify", path(&fixture("two_ivs.g")), "--tol", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(auxiv(&["bogus"]).status.code(), Some(1));
}

#[test]
fn reports_are_deterministic() {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let g = fixture("model_subsume.g");
            auxiv(&["identify", path(&g), "--verify", "10", "--seed", "9"]).stdout
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn mkepi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkepi")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn run_writes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mkepi(&["run", "--scenario", &scenario("two_towns.json"), "--set", "time.final=0.3", "--out", out, "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["final_time"], 0.3);
    for f in report["manifest"].as_array().unwrap() {
        assert!(dir.path().join(f.as_str().unwrap()).exists(), "{f}");
    }
    assert!(dir.path().join("regions/west.csv").exists());
    assert!(report["conservation_drift"]["commuter"].as_f64().unwrap() < 1e-12);
}

#[test]
fn preset_overrides_and_ordinates() {
    let o = mkepi(&[
        "run",
        "--scenario",
        &scenario("test2_parabolic.json"),
        "--set",
        "nx=8",
        "--set",
        "time.final=0.1",
        "--ordinates",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["scenario"], "test2-parabolic");
}

#[test]
fn failures_report_category_and_exit_code() {
    let o = mkepi(&["run", "--scenario", "/nonexistent/x.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[io]"));

    let o = mkepi(&["run", "--scenario", &scenario("two_towns.json"), "--set", "fields.tau=oops"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));

    let o = mkepi(&["run", "--scenario", &scenario("two_towns.json"), "--cfl=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[argument]"));
}

#[test]
fn mesh_info_of_the_regional_mesh() {
    let o = mkepi(&["mesh-info", "--scenario", &scenario("emilia_romagna.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["cells"], 6585);
    assert_eq!(v["cells_by_vertex_count"]["3"], 6585);
}

#[test]
fn small_studies() {
    let o = mkepi(&["converge", "--regime", "hyperbolic", "--base", "2", "--chis", "1,2"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("L1(S)"));
    let dir = tempfile::tempdir().unwrap();
    let o = mkepi(&["ap-check", "--taus", "1e-2,1e-6", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ap.json")).unwrap()).unwrap();
    assert_eq!(v["monotone"], true);
}

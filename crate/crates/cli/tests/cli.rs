use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sncert_core::objects::{distributed_measurement_from, teleportation_instrument_from, BipartiteState, Povm};

fn sncert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sncert"))
        .args(args)
        .env("SNCERT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad report ({e}): {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rke_of_bell_state_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write_json(dir.path(), "bell2.json", &BipartiteState::max_entangled(2));
    let out = sncert(&["rke", "--state", s(&bell), "--k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!((r["result"]["lower"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((r["result"]["upper"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(r["result"]["relaxation"], "exact-ppt");
    assert_eq!(r["config"]["k"], 1);
    assert!(r["version"].is_string());
}

#[test]
fn rke_of_product_state_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let prod = BipartiteState::pure(&sncert_core::linalg::kron_vec(
        &sncert_core::linalg::CVector::from_vec(vec![sncert_core::linalg::cr(1.0), sncert_core::linalg::cr(0.0)]),
        &sncert_core::linalg::CVector::from_vec(vec![sncert_core::linalg::cr(0.0), sncert_core::linalg::cr(1.0)]),
    ), 2, 2)
    .unwrap();
    let path = write_json(dir.path(), "product.json", &prod);
    let out = sncert(&["rke", "--state", s(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!(r["result"]["lower"].as_f64().unwrap().abs() < 1e-9);
    assert!(r["result"]["upper"].as_f64().unwrap() < 1e-7);
}

#[test]
fn verify_theorem5_on_bell_state() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write_json(dir.path(), "bell2.json", &BipartiteState::max_entangled(2));
    let json = dir.path().join("t5.json");
    let out = sncert(&["verify-theorem5", "--state", s(&bell), "--k", "1", "--out", s(&json)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("pass"), "{table}");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let lo = r["result"]["ratio"]["lower"].as_f64().unwrap();
    let hi = r["result"]["ratio"]["upper"].as_f64().unwrap();
    assert!(lo <= 2.0 + 1e-4 && hi >= 2.0 - 1e-4, "[{lo}, {hi}]");
}

#[test]
fn verify_theorem2_and_distributed_objects() {
    let dir = tempfile::tempdir().unwrap();
    let rho = BipartiteState::isotropic(2, 0.8).unwrap();
    let st = write_json(dir.path(), "iso.json", &rho);
    let out = sncert(&["verify-theorem2", "--state", s(&st)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["result"]["passed"], true);

    let dm = distributed_measurement_from(&rho, &Povm::bell(2), &Povm::bell(2)).unwrap();
    let m = write_json(dir.path(), "dm.json", &dm);
    let r = report(&sncert(&["rkdm", "--measurement", s(&m)]));
    let inst = teleportation_instrument_from(&rho, &Povm::bell(2)).unwrap();
    let i = write_json(dir.path(), "inst.json", &inst);
    let q = report(&sncert(&["rsc", "--instrument", s(&i)]));
    let a = r["result"]["lower"].as_f64().unwrap();
    let b = q["result"]["lower"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");

    let c = report(&sncert(&["choi", "--instrument", s(&i)]));
    assert!(c["result"]["trace_preservation_deviation"].as_f64().unwrap() < 1e-9);
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let rho = BipartiteState::isotropic(3, 0.6).unwrap();
    let st = write_json(dir.path(), "iso3.json", &rho);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sncert(&["rke", "--state", s(&st), "--k", "2", "--seed", "7", "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    // The output path is part of the embedded config; compare the rest.
    let strip = |v: Vec<u8>| {
        let mut j: Value = serde_json::from_slice(&v).unwrap();
        j["config"].as_object_mut().unwrap().remove("out");
        serde_json::to_vec(&j).unwrap()
    };
    assert_eq!(strip(a), strip(b));
    let x = sncert(&["rke", "--state", s(&st), "--k", "2", "--seed", "7"]);
    let y = sncert(&["rke", "--state", s(&st), "--k", "2", "--seed", "7"]);
    assert_eq!(x.stdout, y.stdout);
}

#[test]
fn dump_problem_embeds_conic_form() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write_json(dir.path(), "bell2.json", &BipartiteState::max_entangled(2));
    let r = report(&sncert(&["rke", "--state", s(&bell), "--dump-problem"]));
    let p = &r["problem"];
    assert_eq!(p["nvars"], 16);
    assert!(p["cones"].as_array().unwrap().len() >= 2);
    assert_eq!(r["config"]["dump_problem"], true);
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = sncert(&["rke", "--state", "/nonexistent/state.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--state"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"is_substate": false}"#).unwrap();
    let out = sncert(&["rke", "--state", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("op"));

    let bell = write_json(dir.path(), "bell2.json", &BipartiteState::max_entangled(2));
    let out = sncert(&["rke", "--state", s(&bell), "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));

    let out = sncert(&["rkdm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--measurement"));

    let out = sncert(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decompose_separable_state() {
    let dir = tempfile::tempdir().unwrap();
    let iso = write_json(dir.path(), "iso.json", &BipartiteState::isotropic(2, 0.2).unwrap());
    let r = report(&sncert(&["decompose", "--state", s(&iso), "--k", "1"]));
    assert!(r["result"]["residual"].as_f64().unwrap() <= 1e-7);
    let bell = write_json(dir.path(), "bell2.json", &BipartiteState::max_entangled(2));
    let out = sncert(&["decompose", "--state", s(&bell), "--k", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonlocal_core::equivalence::{shift_instance, SLWitness};
use nonlocal_core::io::{from_json_str, to_json_string, write_json, MatrixFile, WitnessFile};
use nonlocal_core::linalg::identity;
use nonlocal_core::random::rng;
use serde_json::Value;

fn nonlocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonlocal")).args(args).output().expect("binary runs")
}

fn json_block(out: &Output) -> Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let (_, body) = text.split_once("--- json ---\n").unwrap_or_else(|| panic!("no json block in {text}"));
    serde_json::from_str(body).unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = nonlocal(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    json_block(&out)
}

fn emit(dir: &Path, name: &str) -> PathBuf {
    ok_json(&["fixtures", "--emit", name, dir.to_str().unwrap()]);
    dir.join(format!("{name}.json"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lists_fixture_gallery() {
    let v = ok_json(&["fixtures", "--list"]);
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert!(names.len() >= 5);
    for n in ["swap", "cnot", "v324", "bcu", "three_by_three", "saturation"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn emitted_fixtures_have_expected_schmidt_ranks() {
    let dir = tempfile::tempdir().unwrap();
    for (name, rank) in [("v324", 3), ("swap", 4), ("identity", 1), ("cnot", 2)] {
        let f = emit(dir.path(), name);
        let v = ok_json(&["schmidt", s(&f)]);
        assert_eq!(v["schmidt_rank"], rank, "{name}");
    }
}

#[test]
fn emit_round_trip_is_byte_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok_json(&["fixtures", "--emit", "all", s(d1.path())]);
    ok_json(&["fixtures", "--emit", "all", s(d2.path())]);
    let mut count = 0;
    for entry in std::fs::read_dir(d1.path()).unwrap() {
        let p = entry.unwrap().path();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, std::fs::read_to_string(d2.path().join(p.file_name().unwrap())).unwrap());
        let parsed: MatrixFile = from_json_str(&text).unwrap();
        assert_eq!(to_json_string(&parsed), text);
        count += 1;
    }
    assert!(count >= 5);
}

#[test]
fn schmidt_writes_factor_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = emit(dir.path(), "cnot");
    let fd = dir.path().join("factors");
    let v = ok_json(&["schmidt", s(&f), "--factors-dir", s(&fd)]);
    assert_eq!(v["factor_files"].as_array().unwrap().len(), 2);
    assert!(fd.join("term1.json").exists());
}

#[test]
fn detect_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&["detect", s(&emit(dir.path(), "v324"))]);
    assert_eq!(v["B"]["controlled"], true);
    assert_eq!(v["B"]["groups"], 4);
    assert_eq!(v["A"]["controlled"], false);

    let v = ok_json(&["detect", s(&emit(dir.path(), "bcu"))]);
    assert_eq!(v["A"]["controlled"], false);
    assert_eq!(v["B"]["controlled"], false);
    assert_eq!(v["A"]["blocks"], serde_json::json!([2, 1]));

    let v = ok_json(&["detect", s(&emit(dir.path(), "cnot")), "--side", "both"]);
    assert_eq!(v["A"]["controlled"], true);
    assert_eq!(v["B"]["controlled"], true);

    let v = ok_json(&["detect", s(&emit(dir.path(), "swap")), "--side", "a"]);
    assert!(v.get("B").is_none());
    assert_eq!(v["A"]["controlled"], false);
}

#[test]
fn decompose_writes_verified_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("form.json");
    let v = ok_json(&["decompose", s(&emit(dir.path(), "cnot")), "--side", "A", "--out", s(&out)]);
    assert_eq!(v["group_count"], 2);
    assert!(v["residual"].as_f64().unwrap() <= 1e-9);
    let form: nonlocal_core::io::ControlledFormFile = from_json_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(form.form().unwrap().group_count(), 2);

    let out = nonlocal(&["decompose", s(&emit(dir.path(), "swap")), "--side", "A"]);
    assert_eq!(out.status.code(), Some(3));
}

fn write_matrix(path: &Path, dims: (usize, usize), m: &nonlocal_core::ComplexMatrix) {
    write_json(path, &MatrixFile::from_matrix(dims.0, dims.1, m)).unwrap();
}

#[test]
fn sl2lu_canonicalizes_shift_witness() {
    let dir = tempfile::tempdir().unwrap();
    let inst = shift_instance(&mut rng(3), &[2, 3], false);
    let (u, v, w) = (dir.path().join("u.json"), dir.path().join("v.json"), dir.path().join("w.json"));
    write_matrix(&u, (2, 3), &inst.u);
    write_matrix(&v, (2, 3), &inst.v);
    write_json(&w, &WitnessFile::from_witness(&inst.witness)).unwrap();
    let out = ok_json(&["sl2lu", "--u", s(&u), "--v", s(&v), "--witness", s(&w)]);
    assert!(out["residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(out["q_ops"].as_array().unwrap().len(), 2);
}

#[test]
fn sl2lu_identity_witness_and_invalid_witness() {
    let dir = tempfile::tempdir().unwrap();
    let f = emit(dir.path(), "cnot");
    let w = dir.path().join("w.json");
    let id = SLWitness { s_ops: vec![identity(2), identity(2)], t_ops: vec![identity(2), identity(2)] };
    write_json(&w, &WitnessFile::from_witness(&id)).unwrap();
    let out = ok_json(&["sl2lu", "--u", s(&f), "--v", s(&f), "--witness", s(&w)]);
    let expect = serde_json::json!([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]);
    for op in out["q_ops"].as_array().unwrap().iter().chain(out["r_ops"].as_array().unwrap()) {
        assert_eq!(op, &expect);
    }
    let mut singular = id.clone();
    singular.s_ops[0] = nonlocal_core::ComplexMatrix::zeros(2, 2);
    write_json(&w, &WitnessFile::from_witness(&singular)).unwrap();
    assert_eq!(nonlocal(&["sl2lu", "--u", s(&f), "--v", s(&f), "--witness", s(&w)]).status.code(), Some(3));
}

#[test]
fn protocol_costs() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&["protocol", s(&emit(dir.path(), "saturation")), "--protocol", "auto"]);
    assert_eq!(v["resource_rank"], 3);
    assert_eq!(v["ebits"].as_f64().unwrap(), 3f64.log2());
    assert!(v["process_fidelity"].as_f64().unwrap() >= 1.0 - 1e-9);

    let v = ok_json(&["protocol", s(&emit(dir.path(), "cnot"))]);
    assert_eq!(v["ebits"].as_f64().unwrap(), 1.0);

    let v = ok_json(&["protocol", s(&emit(dir.path(), "identity"))]);
    assert_eq!(v["ebits"].as_f64().unwrap(), 0.0);

    let v = ok_json(&["protocol", s(&emit(dir.path(), "swap")), "--protocol", "teleport", "--seed", "4"]);
    assert_eq!(v["protocol"], "teleport_twice");
    assert_eq!(v["branches"]["branch_count"], 16);

    let out = nonlocal(&["protocol", s(&emit(dir.path(), "swap")), "--protocol", "controlled"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn protocol_reads_state_files() {
    let dir = tempfile::tempdir().unwrap();
    let state = nonlocal_core::protocol::PureState::random(&["A", "B", "R"], &[2, 2, 3], 1).unwrap();
    let sf = dir.path().join("in.json");
    write_json(&sf, &nonlocal_core::io::StateFile::from_state(&state)).unwrap();
    let of = dir.path().join("out.json");
    let v = ok_json(&["protocol", s(&emit(dir.path(), "cnot")), "--input", s(&sf), "--out", s(&of)]);
    assert!(v["process_fidelity"].as_f64().unwrap() >= 1.0 - 1e-9);
    let out: nonlocal_core::io::StateFile = from_json_str(&std::fs::read_to_string(&of).unwrap()).unwrap();
    assert_eq!(out.labels, vec!["A", "B", "R"]);
}

#[test]
fn rankcheck_random_and_files() {
    let v = ok_json(&["rankcheck", "--random", "2", "--trials", "60", "--seed", "1"]);
    assert_eq!(v["violations"], 0);
    let v = ok_json(&["rankcheck", "--random", "1", "--trials", "40"]);
    assert_eq!(v["random"]["equal_ranks"], 40);

    let dir = tempfile::tempdir().unwrap();
    let ks = nonlocal_core::ranks::random_kronecker_sum(&mut rng(5), 3);
    let kf = dir.path().join("k.json");
    write_json(&kf, &nonlocal_core::io::KroneckerSumFile::from_sum(&ks)).unwrap();
    let v = ok_json(&["rankcheck", s(&kf), "--unitary", s(&emit(dir.path(), "saturation"))]);
    assert_eq!(v["files"].as_array().unwrap().len(), 1);
    assert_eq!(v["unitaries"][0]["equal"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(nonlocal(&["schmidt", s(&bad)]).status.code(), Some(2));
    assert_eq!(nonlocal(&["schmidt", "/nonexistent/file.json"]).status.code(), Some(2));
    assert_eq!(nonlocal(&["frobnicate"]).status.code(), Some(2));

    let nonunitary = dir.path().join("nu.json");
    write_matrix(&nonunitary, (1, 2), &nonlocal_core::linalg::diag_real(&[1.0, 2.0]));
    assert_eq!(nonlocal(&["detect", s(&nonunitary)]).status.code(), Some(3));

    // Schmidt rank 4 input to the rank check is outside its contract.
    let out = nonlocal(&["rankcheck", "--unitary", s(&emit(dir.path(), "swap"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn commands_are_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let f = emit(dir.path(), "v324");
    for args in [
        vec!["protocol", s(&f), "--seed", "9"],
        vec!["decompose", s(&f), "--side", "B", "--seed", "2"],
        vec!["rankcheck", "--random", "3", "--trials", "20", "--seed", "7"],
    ] {
        assert_eq!(nonlocal(&args).stdout, nonlocal(&args).stdout, "{args:?}");
    }
}

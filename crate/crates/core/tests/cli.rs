use std::fs;
use std::path::Path;
use std::process::Command as Process;

use flexoct::builders::build_type1;
use flexoct::cli_io::{
    export_frames, import_frames, parse_path_csv, parse_spec, path_csv_string, run, Command, Geometry, SpecError,
    Status, Tolerances,
};
use flexoct::flexion::{flex_path, DriveSpec, FlexionPath};
use flexoct::octa_model::edge_lengths;
use flexoct::sampling::{random_type1_input, rng};
use serde_json::{json, Value};

fn type1_geometry(seed: u64, builder: &str) -> Value {
    let (a, b, f, axis) = random_type1_input(&mut rng(seed), 0.05);
    json!({
        "builder": builder,
        "a": [a.x, a.y, a.z],
        "b": [b.x, b.y, b.z],
        "f": [f.x, f.y, f.z],
        "axis": { "point": [axis.point.x, axis.point.y, axis.point.z], "direction": [axis.direction.x, axis.direction.y, axis.direction.z] },
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn short_path(seed: u64, steps: usize) -> FlexionPath {
    let (a, b, f, axis) = random_type1_input(&mut rng(seed), 0.05);
    let r = build_type1(a, b, f, &axis).unwrap();
    flex_path(&r, &edge_lengths(&r).unwrap(), &DriveSpec { max_steps: steps, ..DriveSpec::default() }).unwrap()
}

#[test]
fn minimal_spec_gets_defaults() {
    let text = json!({ "command": "classify", "geometry": type1_geometry(1, "type1") }).to_string();
    let spec = parse_spec(&text, None).unwrap();
    assert_eq!(spec.command, Command::Classify);
    assert_eq!(spec.tolerances, Tolerances::default());
    assert_eq!(spec.drive, DriveSpec::default());
    assert!(spec.warnings.is_empty());
    assert!(matches!(spec.geometry, Some(Geometry::Type1 { mirror: false, .. })));
}

#[test]
fn negative_edge_length_names_the_field() {
    let mut lengths = serde_json::Map::new();
    for e in ["AB", "AC", "AE", "AF", "BC", "BD", "BF", "CD", "CE", "DE", "DF", "EF"] {
        lengths.insert(e.into(), json!(1.0));
    }
    lengths.insert("CE".into(), json!(-1.0));
    let text =
        json!({ "command": "classify", "geometry": { "builder": "explicit", "edge_lengths": lengths } }).to_string();
    match parse_spec(&text, None) {
        Err(SpecError::Validation { field, .. }) => assert_eq!(field, "geometry.edge_lengths.CE"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn positions_and_lengths_together_warn() {
    let pos =
        json!({ "A": [1, 0, 0], "B": [0, 1, 0], "C": [0, 0, 1], "D": [-1, 0, 0], "E": [0, -1, 0], "F": [0, 0, -1] });
    let mut lengths = serde_json::Map::new();
    for e in ["AB", "AC", "AE", "AF", "BC", "BD", "BF", "CD", "CE", "DE", "DF", "EF"] {
        lengths.insert(e.into(), json!(2f64.sqrt()));
    }
    let text = json!({ "command": "classify", "geometry": { "builder": "explicit", "positions": pos, "edge_lengths": lengths } })
        .to_string();
    let spec = parse_spec(&text, None).unwrap();
    assert_eq!(spec.warnings.len(), 1);
}

#[test]
fn unknown_key_reports_position() {
    let text = "{\n  \"command\": \"fourbar\",\n  \"sides\": [1, 1, 1, 1],\n  \"colour\": 3\n}";
    match parse_spec(text, None) {
        Err(SpecError::Parse { line, column, message }) => {
            assert_eq!(line, 4);
            assert!(column > 0);
            assert!(message.contains("colour"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn command_mismatch_is_rejected() {
    let text = json!({ "command": "classify", "geometry": type1_geometry(1, "type1") }).to_string();
    assert!(matches!(parse_spec(&text, Some(Command::Flex)), Err(SpecError::Validation { .. })));
}

#[test]
fn exported_frames_round_trip() {
    let path = short_path(3, 2);
    assert_eq!(path.frames.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let written = export_frames(&path, dir.path()).unwrap();
    assert_eq!(written.iter().filter(|p| p.extension().is_some_and(|e| e == "obj")).count(), 3);
    let rows = parse_path_csv(&fs::read_to_string(dir.path().join("path.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);

    let back = import_frames(dir.path()).unwrap();
    let el = edge_lengths(&back[0]).unwrap();
    for r in &back {
        for (x, y) in r.raw_edge_lengths().iter().zip(&path.edge_lengths) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
    assert!(el.max_relative_deviation(&edge_lengths(&path.frames[0].realization).unwrap()) <= 1e-9);
}

#[test]
fn empty_path_gives_header_only_csv() {
    let mut path = short_path(4, 1);
    path.frames.clear();
    let text = path_csv_string(&path);
    assert_eq!(text.lines().count(), 1);
    assert!(parse_path_csv(&text).unwrap().is_empty());
}

fn run_spec(spec: Value, dir: &Path, jobs: usize) -> flexoct::cli_io::Summary {
    let mut spec = spec;
    spec["out"] = json!(dir);
    run(&parse_spec(&spec.to_string(), None).unwrap(), jobs)
}

#[test]
fn mirror_flex_is_not_flexible() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_spec(json!({ "command": "flex", "geometry": type1_geometry(5, "type1-mirror") }), dir.path(), 1);
    assert_eq!(s.status, Status::NotFlexible);
    assert_eq!(s.exit_code, 2);
    let written = read_json(&dir.path().join("summary.json"));
    assert_eq!(written["schema"], 1);
    assert_eq!(written["exit_code"], 2);
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({ "command": "verify", "geometry": type1_geometry(6, "type1"), "drive": { "max_steps": 20 } });
    let s = run_spec(spec, dir.path(), 1);
    assert_eq!(s.exit_code, 0, "{:?}", s.error);
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["frames"], 21);
    for base in ["ABC", "DEF"] {
        assert!(report["mannheim_max_residual"][base].as_f64().unwrap() <= 1e-6);
    }
}

#[test]
fn verify_reads_exported_frames() {
    let frames = tempfile::tempdir().unwrap();
    export_frames(&short_path(7, 10), frames.path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = run_spec(json!({ "command": "verify", "path_dir": frames.path() }), dir.path(), 1);
    assert_eq!(s.exit_code, 0, "{:?}", s.error);
    assert_eq!(read_json(&dir.path().join("verify.json"))["frames"], 11);
}

#[test]
fn fourbar_square() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_spec(json!({ "command": "fourbar", "sides": [1, 1, 1, 1] }), dir.path(), 1);
    assert_eq!(s.exit_code, 0);
    let k: Vec<f64> = s.results["coefficients"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (x, y) in k.iter().zip([8.0, 0.0, -4.0, 0.0, 0.0]) {
        assert!((x - y).abs() <= 1e-12, "{k:?}");
    }
}

#[test]
fn sweep_runs_each_case() {
    let dir = tempfile::tempdir().unwrap();
    let sweep: Vec<Value> = (10..13).map(|s| type1_geometry(s, "type1")).collect();
    let s = run_spec(json!({ "command": "build-type1", "sweep": sweep }), dir.path(), 2);
    assert_eq!(s.exit_code, 0, "{:?}", s.error);
    assert_eq!(s.cases.len(), 3);
    for i in 0..3 {
        let case = read_json(&dir.path().join(format!("case_{i:04}/summary.json")));
        assert_eq!(case["status"], "ok");
        assert!(dir.path().join(format!("case_{i:04}/frame_0000.obj")).exists());
    }
}

fn flexoct(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_flexoct")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let good = dir.path().join("good.json");
    fs::write(&good, json!({ "geometry": type1_geometry(8, "type1") }).to_string()).unwrap();
    let o = flexoct(&["flex", "--spec", good.to_str().unwrap(), "--out", out, "--steps", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_path_csv(&fs::read_to_string(Path::new(out).join("path.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"geometry\": ").unwrap();
    let o = flexoct(&["flex", "--spec", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ParseError"));
    assert_eq!(read_json(&Path::new(out).join("summary.json"))["status"], "input_error");

    let mirror = dir.path().join("mirror.json");
    fs::write(&mirror, json!({ "geometry": type1_geometry(8, "type1-mirror") }).to_string()).unwrap();
    let o = flexoct(&["flex", "--spec", mirror.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

//! Runs the parsers over the checked-in fuzz corpus seeds.

use std::fs;
use std::path::PathBuf;

use flexoct::cli_io::{obj_string, parse_obj, parse_path_csv, parse_spec};

fn seeds(kind: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(kind);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("seed_"))
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn spec_seeds_parse() {
    for (p, text) in seeds("spec") {
        parse_spec(&text, None).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn obj_seeds_round_trip() {
    for (p, text) in seeds("obj") {
        let r = parse_obj(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_obj(&obj_string(&r, None)).unwrap(), r);
    }
}

#[test]
fn path_csv_seeds_parse() {
    for (p, text) in seeds("path_csv") {
        let rows = parse_path_csv(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(rows.len(), text.lines().count() - 1);
    }
}

#[test]
fn truncated_seeds_do_not_panic() {
    for kind in ["spec", "obj", "path_csv"] {
        for (_, text) in seeds(kind) {
            for cut in (0..text.len()).filter(|&i| text.is_char_boundary(i)) {
                let t = &text[..cut];
                let _ = parse_spec(t, None);
                let _ = parse_obj(t);
                let _ = parse_path_csv(t);
            }
        }
    }
}

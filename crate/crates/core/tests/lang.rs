mod common;

use std::fs;

use forge_core::lang::{parse_file, render};

fn fixture_sources() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for group in ["projects", "micro"] {
        let root = common::fixtures().join(group);
        for dir in forge_core::benchkit::project_dirs(&root).unwrap() {
            let mut files: Vec<_> = fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|e| e == "mc"))
                .collect();
            files.sort();
            for f in files {
                let name = f.strip_prefix(&root).unwrap().display().to_string();
                out.push((name, fs::read_to_string(&f).unwrap()));
            }
        }
    }
    out
}

#[test]
fn every_fixture_round_trips_through_render() {
    let sources = fixture_sources();
    assert!(sources.len() >= 40, "{}", sources.len());
    for (i, (path, text)) in sources.iter().enumerate() {
        let m = parse_file(text, path, i as u32).unwrap();
        let rendered = render(&m);
        let again = parse_file(&rendered, path, i as u32).unwrap();
        assert!(m.structurally_eq(&again), "{path}");
        assert_eq!(
            render(&again),
            rendered,
            "{path}: rendering is not a fixpoint"
        );
    }
}

#[test]
fn p1_util_shape() {
    let text = fs::read_to_string(common::project_dir("p1").join("util.mc")).unwrap();
    let m = parse_file(&text, "util.mc", 1).unwrap();
    let names: Vec<&str> = m.functions().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["clamp_index", "checksum"]);
    // clamp_index: if, return, if, return, return; checksum: let, let,
    // while, two assignments, return.
    assert_eq!(m.statement_count(), 11);
}

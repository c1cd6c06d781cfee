#![allow(dead_code)]

use std::path::PathBuf;

use forge_core::benchkit::{prepare_project, PreparedProject};
use forge_core::harness::load_project;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn project_dir(name: &str) -> PathBuf {
    fixtures().join("projects").join(name)
}

pub fn prepared(name: &str, seed: u64) -> PreparedProject {
    prepare_project(load_project(&project_dir(name)).unwrap(), seed).unwrap()
}

/// Compares `actual` with `fixtures/golden/<name>`. Set FORGE_BLESS=1 to
/// (re)record.
pub fn check_golden(name: &str, actual: &str) {
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("FORGE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!(
            "missing golden {}: {e}; record with FORGE_BLESS=1",
            path.display()
        )
    });
    assert!(
        expected == actual,
        "golden {name} differs:\n--- expected\n{expected}\n--- actual\n{actual}"
    );
}

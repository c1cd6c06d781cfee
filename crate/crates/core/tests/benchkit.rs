mod common;

use std::collections::BTreeMap;
use std::fs;

use forge_core::benchkit::{
    corpus_metrics, entropy_bits, generate_corpus_from, load_item, package, replay, run_attempt,
    BenchError, BenchmarkItem, CorpusConfig,
};
use forge_core::inject::{inject_once, InjectionOutcome, InjectionPolicy};
use forge_core::pov::FuzzConfig;

use common::{check_golden, prepared};

fn p2_item() -> BenchmarkItem {
    let project = prepared("p2", 42);
    let r = run_attempt(
        &project,
        0,
        42,
        &InjectionPolicy::default(),
        &FuzzConfig::default(),
    );
    r.item
        .unwrap_or_else(|| panic!("p2 seed 42 gave no item: {:?}", r.record))
}

#[test]
fn p2_manifest_matches_golden() {
    let item = p2_item();
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    check_golden(
        "p2_item.json",
        &fs::read_to_string(dir.path().join("item.json")).unwrap(),
    );
    check_golden("p2_patch.diff", &item.patch.diff);
}

#[test]
fn identical_runs_give_identical_ids() {
    assert_eq!(p2_item().item_id, p2_item().item_id);
}

#[test]
fn package_then_load_is_identity() {
    let item = p2_item();
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    let loaded = load_item(dir.path()).unwrap();
    assert_eq!(loaded, item);

    // Writing the loaded item again gives the same bytes.
    let again = tempfile::tempdir().unwrap();
    loaded.write(again.path()).unwrap();
    for f in [
        "item.json",
        "trace.json",
        "patch.diff",
        "pov.input",
        "pov.min.input",
    ] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn package_rejects_a_pov_that_does_not_reproduce() {
    let project = prepared("p2", 42);
    let policy = InjectionPolicy::default();
    let InjectionOutcome::Verified { plan, patch } = inject_once(
        &project.snapshot,
        &project.baseline,
        &project.suite,
        &policy,
        42,
    ) else {
        panic!("p2 seed 42 should verify");
    };
    let item = p2_item();
    let mut pov = item.pov.clone();
    pov.input = vec![1, 1, 1];
    let dir = tempfile::tempdir().unwrap();
    let err = package(
        &project.snapshot,
        &plan,
        &patch,
        &pov,
        &project.suite,
        item.provenance.clone(),
        dir.path(),
    )
    .unwrap_err();
    assert!(matches!(err, BenchError::Consistency(_)), "{err}");

    let ok = package(
        &project.snapshot,
        &plan,
        &patch,
        &item.pov,
        &project.suite,
        item.provenance.clone(),
        dir.path(),
    )
    .unwrap();
    assert_eq!(ok, item);
}

#[test]
fn edited_cwe_is_a_schema_error() {
    let item = p2_item();
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    let path = dir.path().join("item.json");
    let text = fs::read_to_string(&path).unwrap();
    let other = if item.labels.cwe == "CWE-369" {
        "CWE-190"
    } else {
        "CWE-369"
    };
    let needle = format!("\"cwe\": \"{}\"", item.labels.cwe);
    assert!(text.contains(&needle), "{text}");
    fs::write(
        &path,
        text.replace(&needle, &format!("\"cwe\": \"{other}\"")),
    )
    .unwrap();
    match load_item(dir.path()).unwrap_err() {
        BenchError::Schema { path, .. } => assert_eq!(path, "labels.cwe"),
        e => panic!("expected a schema error, got {e}"),
    }
}

#[test]
fn unknown_field_reports_its_path() {
    let item = p2_item();
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    let path = dir.path().join("item.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(
        &path,
        text.replacen("\"cwe\":", "\"cwe_id\":\"x\",\"cwe\":", 1),
    )
    .unwrap();
    match load_item(dir.path()).unwrap_err() {
        BenchError::Schema { path, .. } => assert!(path.starts_with("item.json:labels"), "{path}"),
        e => panic!("expected a schema error, got {e}"),
    }
}

#[test]
fn tampered_source_is_a_digest_mismatch() {
    let item = p2_item();
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    let main = dir.path().join("original/main.mc");
    let mut text = fs::read_to_string(&main).unwrap();
    text.push_str("fn unused() {\n}\n");
    fs::write(&main, text).unwrap();
    assert!(matches!(
        load_item(dir.path()).unwrap_err(),
        BenchError::DigestMismatch(_)
    ));
}

#[test]
fn corrupted_pov_file_fails_replay() {
    let item = p2_item();
    assert!(replay(&item));
    let dir = tempfile::tempdir().unwrap();
    item.write(dir.path()).unwrap();
    fs::write(dir.path().join("pov.input"), "1 1 1\n").unwrap();
    let loaded = load_item(dir.path()).unwrap();
    assert!(!replay(&loaded));
    assert_eq!(corpus_metrics(&[loaded], &[]).pov_reproducibility, 0.0);
}

#[test]
fn zero_attempts_give_zero_rates() {
    let project = prepared("p1", 0);
    let config = CorpusConfig {
        n_attempts: 0,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus_from(&[project], &config);
    let m = corpus.metrics;
    assert!(corpus.items.is_empty());
    assert_eq!((m.attempts, m.verified, m.with_pov, m.items), (0, 0, 0, 0));
    for rate in [
        m.injection_validity_rate,
        m.pov_yield,
        m.pov_reproducibility,
        m.review_pass_rate,
        m.cwe_entropy_bits,
        m.mean_depth,
    ] {
        assert_eq!(rate, 0.0);
    }
    assert!(m.depth_histogram.is_empty());
}

#[test]
fn entropy_conventions() {
    assert_eq!(entropy_bits([5, 5, 5, 5]), 2.0);
    assert_eq!(entropy_bits([7]), 0.0);
    assert_eq!(entropy_bits([0, 3, 0]), 0.0);
    assert_eq!(entropy_bits(Vec::<usize>::new()), 0.0);
    assert_eq!(entropy_bits([1, 1]), 1.0);
}

#[test]
fn depth_histogram_and_mean() {
    let item = p2_item();
    let mut a = item.clone();
    a.labels.cross_file_depth = 1;
    let mut b = item.clone();
    b.labels.cross_file_depth = 3;
    let m = corpus_metrics(&[a, b], &[]);
    assert_eq!(m.mean_depth, 2.0);
    assert_eq!(m.depth_histogram, BTreeMap::from([(1, 1), (3, 1)]));

    let single = corpus_metrics(&[item], &[]);
    assert_eq!(single.cwe_entropy_bits, 0.0);
    assert_eq!(single.pov_reproducibility, 1.0);
}

#[test]
fn four_uniform_cwes_give_two_bits() {
    let item = p2_item();
    let items: Vec<BenchmarkItem> = ["CWE-193", "CWE-369", "CWE-190", "CWE-125"]
        .iter()
        .flat_map(|c| {
            let mut i = item.clone();
            i.labels.cwe = c.to_string();
            [i.clone(), i]
        })
        .collect();
    assert_eq!(corpus_metrics(&items, &[]).cwe_entropy_bits, 2.0);
}

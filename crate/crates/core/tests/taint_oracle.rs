//! Dynamic taint tags over an exhaustive small input domain must never reach
//! a sink the static analysis has no path for.

mod common;

use std::collections::BTreeSet;

use forge_core::analysis::taint_analysis;
use forge_core::harness::load_project;
use forge_core::lang::{run_tagged, Limits, NodeId, Status};

const DOMAIN: [i64; 7] = [-1, 0, 1, 2, 63, 64, 65];

fn inputs(len: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                DOMAIN.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out
}

/// (observations seen, dynamic-without-static misses) for one project dir.
fn check(dir: &std::path::Path, max_len: usize) -> (usize, Vec<String>) {
    let program = load_project(dir).unwrap().program().unwrap();
    let statics: BTreeSet<(NodeId, NodeId)> = taint_analysis(&program)
        .iter()
        .map(|p| (p.source, p.sink))
        .collect();
    let mut seen = BTreeSet::new();
    let mut misses = Vec::new();
    for len in 0..=max_len {
        for input in inputs(len) {
            let (r, obs) = run_tagged(&program, &input, Limits::default());
            assert_ne!(r.status, Status::StepLimit, "{input:?}");
            for o in obs {
                for &src in &o.sources {
                    if seen.insert((src, o.sink)) && !statics.contains(&(src, o.sink)) {
                        misses.push(format!(
                            "{} {:?} <- {:?} on {input:?}",
                            dir.display(),
                            o.kind,
                            src
                        ));
                    }
                }
            }
        }
    }
    (seen.len(), misses)
}

#[test]
fn micro_fixtures_have_no_dynamic_only_flows() {
    let root = common::fixtures().join("micro");
    let dirs = forge_core::benchkit::project_dirs(&root).unwrap();
    assert!(dirs.len() >= 8);
    let mut total = 0;
    for d in &dirs {
        let (n, misses) = check(d, 4);
        assert!(misses.is_empty(), "{misses:#?}");
        total += n;
    }
    assert!(total >= 10, "only {total} dynamic flows observed");
}

#[test]
fn bundled_projects_have_no_dynamic_only_flows() {
    let dirs = forge_core::benchkit::project_dirs(&common::fixtures().join("projects")).unwrap();
    for d in &dirs {
        let (_, misses) = check(d, 3);
        assert!(misses.is_empty(), "{misses:#?}");
    }
}

#[test]
fn p2_flow_crosses_into_the_stats_file() {
    let program = load_project(&common::project_dir("p2"))
        .unwrap()
        .program()
        .unwrap();
    let paths = taint_analysis(&program);
    let cross: Vec<_> = paths
        .iter()
        .filter(|p| program.file_path(p.sink.file_id()) == "stats.mc" && p.cross_file_depth == 2)
        .collect();
    assert!(!cross.is_empty());
    let sinks: BTreeSet<NodeId> = cross.iter().map(|p| p.sink).collect();
    let observed = inputs(4).into_iter().any(|input| {
        let (_, obs) = run_tagged(&program, &input, Limits::default());
        obs.iter().any(|o| sinks.contains(&o.sink))
    });
    assert!(observed, "no tagged value reached the stats.mc sink");
}

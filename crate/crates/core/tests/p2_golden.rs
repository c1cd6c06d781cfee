//! Recorded reference outputs for fixture p2. Re-record with FORGE_BLESS=1.

mod common;

use forge_core::analysis::{build_call_graph, golden_lines, taint_analysis};
use forge_core::inject::{inject_once, plan, InjectionOutcome, InjectionPolicy};
use forge_core::json::to_canonical;

use common::{check_golden, prepared};

#[test]
fn p2_call_graph_and_taint() {
    let project = prepared("p2", 42);
    let program = project.snapshot.program().unwrap();
    check_golden(
        "p2_callgraph.txt",
        &build_call_graph(&program).render(&program),
    );
    check_golden(
        "p2_taint.txt",
        &golden_lines(&program, &taint_analysis(&program)),
    );
}

#[test]
fn p2_seed_42_plan_and_patch() {
    let project = prepared("p2", 42);
    let policy = InjectionPolicy::default();
    let p = plan(&project.snapshot, &project.baseline, &policy, 42).unwrap();
    check_golden("p2_plan.json", &to_canonical(&p).unwrap());
    match inject_once(
        &project.snapshot,
        &project.baseline,
        &project.suite,
        &policy,
        42,
    ) {
        InjectionOutcome::Verified {
            plan: verified,
            patch,
        } => {
            assert_eq!(*verified, p);
            check_golden("p2_patch.diff", &patch.diff);
            let changed = patch
                .diff
                .lines()
                .filter(|l| {
                    l.starts_with(['+', '-']) && !l.starts_with("+++") && !l.starts_with("---")
                })
                .count();
            assert!(changed <= 4, "{changed}");
        }
        other => panic!("expected a verified outcome, got {other:?}"),
    }
}

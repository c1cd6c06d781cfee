use forge_core::harness::{capture_baseline, ExpectStatus, ProjectSnapshot, TestCase, TestSuite};
use forge_core::inject::catalog::PatternId;
use forge_core::inject::{implement, plan, InjectionPolicy};
use forge_core::lang::{compile, run, CrashKind, Limits};
use forge_core::pov::{
    fuzz, minimize, reproduce, trigger_trace, FuzzConfig, FuzzTarget, PreconditionError,
};

const DIV: &str = "fn main() {\n  let x = read_int();\n  let d = read_int();\n  if (d == 0) {\n    abort(1);\n  }\n  print(x / d);\n}\n";

fn case(name: &str, input: &[i64], out: &str) -> TestCase {
    TestCase {
        name: name.into(),
        input: input.to_vec(),
        expect_out: vec![out.into()],
        expect_status: ExpectStatus::Ok,
    }
}

#[test]
fn finds_and_minimizes_div_zero_after_injection() {
    let snap = ProjectSnapshot::from_sources("div", "main", &[("main.mc", DIV)]).unwrap();
    let suite = TestSuite {
        cases: vec![case("a", &[8, 2], "4"), case("b", &[9, 3], "3")],
    };
    let baseline = capture_baseline(&snap, &suite).unwrap();
    let policy = InjectionPolicy {
        allowed_patterns: vec![PatternId::P4DivGuard],
        ..InjectionPolicy::default()
    };
    let p = plan(&snap, &baseline, &policy, 1).unwrap();
    let patch = implement(&snap, &p).unwrap();
    let patched = forge_core::inject::apply_to_snapshot(&snap, &patch).unwrap();
    let program = patched.program().unwrap();
    let target = FuzzTarget::from_plan(&p, &patch);
    assert_eq!((target.file.as_str(), target.line), ("main.mc", 4));
    let config = FuzzConfig {
        seed: 7,
        ..FuzzConfig::default()
    };
    let record = fuzz(&program, &target, &suite.inputs(), &config).unwrap();
    assert_eq!(record.signature.kind, CrashKind::DivZero);
    assert_eq!(record.signature.line, 4);
    // x must be present and may be anything; d must be zero.
    assert_eq!(record.minimized_input, vec![0, 0]);
    assert!(record.executions_used <= config.budget);
    assert_eq!(record.trace.files_on_path, vec!["main.mc".to_string()]);
    assert!(reproduce(&program, &record.minimized_input, &record.signature).matched);
    assert!(reproduce(&program, &record.input, &record.signature).matched);

    let again = fuzz(&program, &target, &suite.inputs(), &config).unwrap();
    assert_eq!(again, record);
}

#[test]
fn minimize_drops_irrelevant_inputs() {
    let src = "fn main() {\n  let n = read_int();\n  while (1 == 1) {\n    print(100 / n);\n    n = read_int();\n  }\n}\n";
    let program = compile(&[("main.mc", src)], "main").unwrap();
    let sig = run(&program, &[5, 0, 9], Limits::default())
        .violation
        .unwrap();
    assert_eq!(sig.kind, CrashKind::DivZero);
    assert_eq!(minimize(&program, &[5, 0, 9], &sig).unwrap(), vec![0]);
    assert_eq!(minimize(&program, &[5, 9], &sig), Err(PreconditionError));
    let r = reproduce(&program, &[5, 9], &sig);
    assert!(!r.matched);
}

#[test]
fn shrink_finds_the_smallest_failing_index() {
    let src = "fn main() {\n  let b = alloc(8);\n  let i = read_int();\n  if (i >= 0) {\n    print(b[i]);\n  }\n}\n";
    let program = compile(&[("main.mc", src)], "main").unwrap();
    let sig = run(&program, &[50], Limits::default()).violation.unwrap();
    assert_eq!(
        minimize(&program, &[3, 50, 1], &sig).unwrap_err(),
        PreconditionError
    );
    let sig = run(&program, &[50, 1], Limits::default())
        .violation
        .unwrap();
    assert_eq!(minimize(&program, &[50, 1], &sig).unwrap(), vec![8]);
}

#[test]
fn trace_spans_files() {
    let main = "fn main() {\n  let i = read_int();\n  print(get(i));\n}\n";
    let util = "fn get(i: int) -> int {\n  let b = alloc(4);\n  return b[i];\n}\n";
    let program = compile(&[("main.mc", main), ("util.mc", util)], "main").unwrap();
    let trace = trigger_trace(&program, &[9]).unwrap();
    assert_eq!(
        trace.files_on_path,
        vec!["main.mc".to_string(), "util.mc".to_string()]
    );
    assert_eq!(trace.crash_site.file, "util.mc");
    assert_eq!(trace.crash_site.line, 3);
    assert_eq!(trace.call_path.len(), 2);
    assert!(trigger_trace(&program, &[1]).is_none());
}

#[test]
fn unreachable_target_exhausts_budget() {
    let program = compile(&[("main.mc", DIV)], "main").unwrap();
    let target = FuzzTarget {
        file: "main.mc".into(),
        line: 7,
        crash_kinds: vec![CrashKind::DivZero],
        constants: vec![0],
    };
    let config = FuzzConfig {
        budget: 300,
        ..FuzzConfig::default()
    };
    let err = fuzz(&program, &target, &[vec![1, 1]], &config).unwrap_err();
    assert_eq!(err.executions_used, 300);
}

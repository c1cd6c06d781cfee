use forge_core::analysis::{
    golden_lines, mine_sites, site_features, taint_analysis, QueryConfig, SinkKind, SourceKind,
};
use forge_core::inject::catalog::PatternId;
use forge_core::lang::{compile, Program};

fn program(body: &str) -> Program {
    compile(
        &[("main.mc", &format!("fn main() {{\n{body}\n}}\n"))],
        "main",
    )
    .unwrap()
}

#[test]
fn direct_flow_to_alloc() {
    let p = program("  let n = read_int();\n  let b = alloc(n);");
    let paths = taint_analysis(&p);
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].source_kind, SourceKind::ReadInt);
    assert_eq!(paths[0].sink_kind, SinkKind::AllocSize);
    assert!(!paths[0].guarded);
    assert_eq!(paths[0].cross_file_depth, 1);
}

#[test]
fn disjunctive_guard_marks_both_comparisons() {
    let p = program(
        "  let n = read_int();\n  if (n < 0 || n > 64) {\n    abort(1);\n  }\n  let b = alloc(n);",
    );
    let paths = taint_analysis(&p);
    assert_eq!(paths.len(), 1);
    assert!(paths[0].guarded);
    assert_eq!(paths[0].guard_sites.len(), 2);
    assert_eq!(
        golden_lines(&p, &paths),
        "READ_INT main.mc:2 -> ALLOC_SIZE main.mc:6 guarded=1 depth=1\n"
    );
}

#[test]
fn no_reads_no_sites() {
    let p = program("  let b = alloc(4);\n  b[1] = 2;\n  print(8 / len(b));");
    assert!(mine_sites(&p, &QueryConfig::default()).is_empty());
    assert!(taint_analysis(&p).is_empty());
}

#[test]
fn guard_bounding_a_product_enables_overflow_pattern() {
    let p = program(
        "  let n = read_int();\n  if (n < 0 || n > 64) {\n    abort(1);\n  }\n  let b = alloc(n * 4);",
    );
    let sites = mine_sites(&p, &QueryConfig::default());
    let alloc = sites
        .iter()
        .find(|s| s.path.sink_kind == SinkKind::AllocSize)
        .unwrap();
    assert!(alloc
        .compatible_patterns
        .contains(&PatternId::P2GuardRemoval));
    assert!(alloc
        .compatible_patterns
        .contains(&PatternId::P3OverflowGuard));
}

#[test]
fn unguarded_sites_need_no_compatible_pattern_for_detection() {
    let p = program("  let n = read_int();\n  let b = alloc(n);");
    assert!(mine_sites(&p, &QueryConfig::default()).is_empty());
    let all = mine_sites(
        &p,
        &QueryConfig {
            require_compatible: false,
            ..QueryConfig::default()
        },
    );
    assert_eq!(all.len(), 1);
}

#[test]
fn feature_encoding() {
    let p = program("  let b = alloc(8);\n  b[read_int()] = 1;");
    let all = QueryConfig {
        require_compatible: false,
        ..QueryConfig::default()
    };
    let sites = mine_sites(&p, &all);
    assert_eq!(sites.len(), 1);
    assert_eq!(sites[0].path.steps.len(), 2);
    assert_eq!(
        site_features(&p, &sites[0]),
        [1.0, 0.0, 0.0, 0.125, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
    );

    let guarded =
        program("  let b = alloc(8);\n  let i = read_int();\n  if (i < 8) {\n    b[i] = 1;\n  }");
    let sites = mine_sites(&guarded, &all);
    let f = site_features(&guarded, &sites[0]);
    assert_eq!((f[1], f[2]), (1.0, 1.0));
    for s in &sites {
        assert!(s.features.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn cross_file_parameter_flow() {
    let util = "fn put(b: buf, i: int) {\n  b[i] = 1;\n}\n";
    let main = "fn main() {\n  let b = alloc(4);\n  let i = read_int();\n  if (i < 0 || i >= 4) {\n    abort(1);\n  }\n  put(b, i);\n}\n";
    let p = compile(&[("main.mc", main), ("util.mc", util)], "main").unwrap();
    let paths = taint_analysis(&p);
    let idx = paths
        .iter()
        .find(|p| p.sink_kind == SinkKind::Index)
        .unwrap();
    assert_eq!(idx.cross_file_depth, 2);
    assert!(idx.guarded);
    let steps: Vec<&str> = idx.steps.iter().map(|s| s.function.as_str()).collect();
    assert_eq!(steps.first(), Some(&"main"));
    assert_eq!(steps.last(), Some(&"put"));
    let cross = mine_sites(
        &p,
        &QueryConfig {
            require_cross_file: true,
            ..QueryConfig::default()
        },
    );
    assert_eq!(cross.len(), 1);
    assert!(cross[0]
        .compatible_patterns
        .contains(&PatternId::P2GuardRemoval));
}

#[test]
fn buffer_contents_carry_taint() {
    let p = program("  let src = read_buf(2);\n  let b = alloc(4);\n  print(b[src[0]]);");
    let paths = taint_analysis(&p);
    let kinds: Vec<(SourceKind, SinkKind)> =
        paths.iter().map(|p| (p.source_kind, p.sink_kind)).collect();
    assert!(kinds.contains(&(SourceKind::ReadBuf, SinkKind::Index)));
}

#[test]
fn mining_is_deterministic() {
    let p = program("  let n = read_int();\n  let d = read_int();\n  if (d == 0) {\n    abort(1);\n  }\n  print(n / d);\n  let b = alloc(n + 1);");
    let a = mine_sites(&p, &QueryConfig::default());
    let b = mine_sites(&p, &QueryConfig::default());
    assert_eq!(a, b);
    assert!(a
        .iter()
        .any(|s| s.compatible_patterns.contains(&PatternId::P4DivGuard)));
}

//! One test per acceptance criterion. Each writes a `PASS`/`FAIL` line to
//! stderr (bypassing output capture) before asserting.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge_core::analysis::{golden_lines, taint_analysis, FEATURE_WIDTH};
use forge_core::benchkit::{
    corpus_metrics, entropy_bits, generate_corpus_from, load_item, prepare_projects, project_dirs,
    replay, run_attempt, write_corpus, BenchmarkItem, Corpus, CorpusConfig, PreparedProject,
};
use forge_core::coevolve::{
    coevolve, policy_update, stationary_ablation, train_detector, ArmChoice, CoevolveConfig,
    DetectorModel, Example, PolicyState, TrainConfig,
};
use forge_core::harness::{load_project, run_suite};
use forge_core::inject::catalog::PatternId;
use forge_core::inject::InjectionPolicy;
use forge_core::json::to_canonical;
use forge_core::lang::{parse_file, render, run, run_tagged, Limits, NodeId};
use forge_core::pov::FuzzConfig;

fn report(name: &str, result: Result<String, String>) {
    let line = match &result {
        Ok(detail) => format!("PASS {name}: {detail}\n"),
        Err(detail) => format!("FAIL {name}: {detail}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(detail) = result {
        panic!("{name}: {detail}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn project_root() -> PathBuf {
    common::fixtures().join("projects")
}

fn projects(seed: u64) -> Vec<PreparedProject> {
    prepare_projects(&project_dirs(&project_root()).unwrap(), seed).unwrap()
}

fn batch_config(seed: u64) -> CorpusConfig {
    CorpusConfig {
        n_attempts: 100,
        seed,
        jobs: 8,
        ..CorpusConfig::default()
    }
}

/// The reference corpus: every bundled project, n=100, seed 42.
fn corpus() -> &'static (Corpus, Duration) {
    static CORPUS: OnceLock<(Corpus, Duration)> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let start = Instant::now();
        let c = generate_corpus_from(&projects(42), &batch_config(42));
        (c, start.elapsed())
    })
}

fn items() -> &'static [BenchmarkItem] {
    &corpus().0.items
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c01_determinism() {
    report(
        "determinism",
        (|| {
            let start = Instant::now();
            let prepared = projects(42);
            // Per stage: mining, injection, fuzzing, minimization and packaging.
            for (i, p) in prepared.iter().enumerate() {
                let program = p.snapshot.program().unwrap();
                let lines: Vec<String> = (0..3)
                    .map(|_| golden_lines(&program, &taint_analysis(&program)))
                    .collect();
                ensure(lines.iter().all(|l| *l == lines[0]), || {
                    format!("{} mining differs", p.snapshot.manifest.name)
                })?;
                let runs: Vec<_> = (0..3)
                    .map(|_| {
                        run_attempt(
                            p,
                            i,
                            1000 + i as u64,
                            &InjectionPolicy::default(),
                            &FuzzConfig::default(),
                        )
                    })
                    .collect();
                for r in &runs[1..] {
                    ensure(r.record == runs[0].record && r.item == runs[0].item, || {
                        format!("{} attempt differs", p.snapshot.manifest.name)
                    })?;
                }
                if let Some(item) = &runs[0].item {
                    let dirs: Vec<tempfile::TempDir> =
                        (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
                    for d in &dirs {
                        item.write(d.path()).unwrap();
                    }
                    ensure(
                        tree(dirs[0].path()) == tree(dirs[1].path())
                            && tree(dirs[1].path()) == tree(dirs[2].path()),
                        || format!("{} item bytes differ", p.snapshot.manifest.name),
                    )?;
                }
            }
            // Full batch, three times, with different worker counts.
            let mut batch_trees = Vec::new();
            for jobs in [1, 4, 8] {
                let dir = tempfile::tempdir().unwrap();
                let config = CorpusConfig {
                    jobs,
                    ..batch_config(42)
                };
                write_corpus(&generate_corpus_from(&prepared, &config), dir.path()).unwrap();
                batch_trees.push(tree(dir.path()));
            }
            ensure(batch_trees.iter().all(|t| *t == batch_trees[0]), || {
                "batch output differs across runs".into()
            })?;
            // Full co-evolution loop, three times.
            let config = CoevolveConfig {
                seed: 42,
                ..CoevolveConfig::default()
            };
            let reports: Vec<String> = (0..3)
                .map(|_| to_canonical(&coevolve(&prepared, &config).unwrap().report).unwrap())
                .collect();
            ensure(reports.iter().all(|r| *r == reports[0]), || {
                "coevolve report differs across runs".into()
            })?;
            let elapsed = start.elapsed();
            ensure(elapsed < Duration::from_secs(120), || {
                format!("took {elapsed:?}")
            })?;
            Ok(format!(
                "{} projects x 3 runs per stage, 3 batches ({} files), 3 coevolve runs in {:.1}s",
                prepared.len(),
                batch_trees[0].len(),
                elapsed.as_secs_f64()
            ))
        })(),
    );
}

#[test]
fn c02_pov_reproducibility() {
    report(
        "pov reproducibility",
        (|| {
            let (c, took) = corpus();
            let projects: BTreeSet<&str> =
                c.items.iter().map(|i| i.project.name.as_str()).collect();
            ensure(project_dirs(&project_root()).unwrap().len() >= 10, || {
                "fewer than 10 projects".into()
            })?;
            ensure(c.items.len() >= 50, || {
                format!("only {} items", c.items.len())
            })?;
            let start = Instant::now();
            let m = corpus_metrics(&c.items, &c.attempts);
            let total = *took + start.elapsed();
            ensure(m.pov_reproducibility == 1.0, || {
                format!("reproducibility {}", m.pov_reproducibility)
            })?;
            ensure(total < Duration::from_secs(300), || {
                format!("took {total:?}")
            })?;
            Ok(format!(
                "{} items from {} projects, reproducibility {} ({:.1}s)",
                c.items.len(),
                projects.len(),
                m.pov_reproducibility,
                total.as_secs_f64()
            ))
        })(),
    );
}

#[test]
fn c03_injection_validity() {
    report(
        "injection validity",
        (|| {
            for item in items() {
                let patched = item
                    .patched_program()
                    .map_err(|e| format!("{}: {e}", item.item_id))?;
                let original = item.snapshot().unwrap().program().unwrap();
                let report = run_suite(&patched, &item.harness);
                ensure(report.all_passed(), || {
                    format!("{}: {:?}", item.item_id, report.results)
                })?;
                for case in &item.harness.cases {
                    let a = run(&patched, &case.input, Limits::default());
                    let b = run(&original, &case.input, Limits::default());
                    ensure(
                        a.violation.is_none() && a.outputs == b.outputs && a.status == b.status,
                        || format!("{} test {} changed behaviour", item.item_id, case.name),
                    )?;
                }
                ensure(replay(item), || format!("{} does not replay", item.item_id))?;
            }
            let tests: usize = items().iter().map(|i| i.harness.cases.len()).sum();
            Ok(format!(
                "{} items, {tests} test replays, all identical and violation-free",
                items().len()
            ))
        })(),
    );
}

#[test]
fn c04_differential_ground_truth() {
    report(
        "differential ground truth",
        (|| {
            for item in items() {
                let patched = item.patched_program().unwrap();
                let original = item.snapshot().unwrap().program().unwrap();
                for input in [&item.pov.input, &item.pov.minimized_input] {
                    let p = run(&patched, input, Limits::default());
                    ensure(p.violation.as_ref() == Some(&item.pov.signature), || {
                        format!("{}: patched run gives {:?}", item.item_id, p.violation)
                    })?;
                    let o = run(&original, input, Limits::default());
                    ensure(!o.crashed(), || {
                        format!("{}: original crashes with {:?}", item.item_id, o.violation)
                    })?;
                }
            }
            Ok(format!(
                "{} items: PoV crashes patched with stored signature, original clean",
                items().len()
            ))
        })(),
    );
}

#[test]
fn c05_minimality() {
    report(
        "minimality",
        (|| {
            let mut longest = 0;
            for item in items() {
                let patched = item.patched_program().unwrap();
                let min = &item.pov.minimized_input;
                longest = longest.max(min.len());
                for i in 0..min.len() {
                    let mut shorter = min.clone();
                    shorter.remove(i);
                    let r = run(&patched, &shorter, Limits::default());
                    ensure(r.violation.as_ref() != Some(&item.pov.signature), || {
                        format!(
                            "{}: removing element {i} of {min:?} still reproduces",
                            item.item_id
                        )
                    })?;
                }
            }
            Ok(format!(
                "{} minimized PoVs are 1-minimal (longest {longest})",
                items().len()
            ))
        })(),
    );
}

const DOMAIN: [i64; 7] = [-1, 0, 1, 2, 63, 64, 65];

fn domain_inputs(max_len: usize) -> Vec<Vec<i64>> {
    let mut all = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|prefix: &Vec<i64>| {
                DOMAIN.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
        all.extend(layer.iter().cloned());
    }
    all
}

#[test]
fn c06_taint_oracle_agreement() {
    report(
        "taint-oracle agreement",
        (|| {
            let dirs = project_dirs(&common::fixtures().join("micro")).unwrap();
            let inputs = domain_inputs(4);
            let mut observed = 0;
            for d in &dirs {
                let program = load_project(d).unwrap().program().unwrap();
                let statics: BTreeSet<(NodeId, NodeId)> = taint_analysis(&program)
                    .iter()
                    .map(|p| (p.source, p.sink))
                    .collect();
                let mut seen = BTreeSet::new();
                for input in &inputs {
                    let (_, obs) = run_tagged(&program, input, Limits::default());
                    for o in obs {
                        for &src in &o.sources {
                            if seen.insert((src, o.sink)) {
                                ensure(statics.contains(&(src, o.sink)), || {
                                    format!(
                                        "{}: dynamic-only flow {:?} <- {src:?} on {input:?}",
                                        d.display(),
                                        o.kind
                                    )
                                })?;
                            }
                        }
                    }
                }
                observed += seen.len();
            }
            Ok(format!(
            "{} micro-fixtures, {} inputs each, {observed} dynamic flows, 0 without a static path",
            dirs.len(),
            inputs.len()
        ))
        })(),
    );
}

fn direct_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.log2();
        }
    }
    h
}

#[test]
fn c07_diversity() {
    report(
        "diversity",
        (|| {
            ensure(entropy_bits([3, 3, 3, 3]) == 2.0, || {
                "uniform 4-class entropy is not 2.0".into()
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(0xd1e5);
            for _ in 0..1000 {
                let classes = rng.gen_range(0..=8);
                let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(0..=20)).collect();
                let h = entropy_bits(counts.iter().copied());
                let present = counts.iter().filter(|&&c| c > 0).count();
                let expected = if present <= 1 {
                    0.0
                } else {
                    direct_entropy(&counts)
                };
                ensure((h - expected).abs() <= 1e-12, || {
                    format!("{counts:?}: {h} vs {expected}")
                })?;
                let upper = if present <= 1 {
                    0.0
                } else {
                    (present as f64).log2()
                };
                ensure(h >= 0.0 && h <= upper + 1e-12, || {
                    format!("{counts:?}: {h} outside [0, {upper}]")
                })?;
            }
            let m = &corpus().0.metrics;
            let deep = items()
                .iter()
                .filter(|i| i.labels.cross_file_depth >= 2)
                .count();
            ensure(m.cwe_counts.len() >= 3, || {
                format!("only {} CWE labels", m.cwe_counts.len())
            })?;
            ensure(deep >= 10, || format!("only {deep} items with depth >= 2"))?;
            Ok(format!(
            "uniform-4 = 2.0, 1000 multisets within 1e-12; corpus has {} CWEs ({:.4} bits), {deep} items at depth >= 2",
            m.cwe_counts.len(),
            m.cwe_entropy_bits
        ))
        })(),
    );
}

/// Held-out items are those from a quarter of the projects, rotated by seed,
/// so no held-out program was seen in training.
fn split(
    items: &[BenchmarkItem],
    names: &[String],
    seed: u64,
) -> (Vec<BenchmarkItem>, Vec<BenchmarkItem>) {
    let held: BTreeSet<&String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as u64 + seed) % 4 == 0)
        .map(|(_, n)| n)
        .collect();
    items
        .iter()
        .cloned()
        .partition(|i| !held.contains(&i.project.name))
}

#[test]
fn c08_detector_learning() {
    report(
        "detector learning",
        (|| {
            let start = Instant::now();
            let dirs = project_dirs(&project_root()).unwrap();
            let names: Vec<String> = dirs
                .iter()
                .map(|d| load_project(d).unwrap().manifest.name)
                .collect();
            let (mut untrained, mut trained) = (0.0, 0.0);
            let mut per_seed = Vec::new();
            for seed in 0..5 {
                let corpus = generate_corpus_from(&projects(seed), &batch_config(seed));
                let (train, held_out) = split(&corpus.items, &names, seed);
                let r = stationary_ablation(
                    &train,
                    &held_out,
                    5,
                    TrainConfig {
                        seed,
                        ..TrainConfig::default()
                    },
                )
                .map_err(|e| e.to_string())?;
                untrained += r.untrained_recall / 5.0;
                trained += r.trained_recall / 5.0;
                per_seed.push(format!("{:.3}/{:.3}", r.untrained_recall, r.trained_recall));
            }
            ensure(trained > untrained, || {
                format!("trained {trained:.4} <= untrained {untrained:.4} ({per_seed:?})")
            })?;

            let mut pos = [0.0; FEATURE_WIDTH];
            pos[0] = 1.0;
            pos[1] = 1.0;
            let mut neg = [0.0; FEATURE_WIDTH];
            neg[0] = 1.0;
            let examples = [
                Example {
                    features: pos,
                    label: true,
                },
                Example {
                    features: neg,
                    label: false,
                },
            ];
            for seed in 0..10 {
                let t = train_detector(
                    &DetectorModel::zero(TrainConfig {
                        seed,
                        ..TrainConfig::default()
                    }),
                    &examples,
                )
                .map_err(|e| e.to_string())?;
                ensure(t.loss_after < t.loss_before, || {
                    format!("seed {seed}: loss did not decrease")
                })?;
            }
            let elapsed = start.elapsed();
            ensure(elapsed < Duration::from_secs(120), || {
                format!("took {elapsed:?}")
            })?;
            Ok(format!(
            "mean recall@5 untrained {untrained:.4} < trained {trained:.4} (per seed untrained/trained {}); separable loss decreases for 10 seeds ({:.1}s)",
            per_seed.join(" "),
            elapsed.as_secs_f64()
        ))
        })(),
    );
}

fn exp3_invariants(state: &PolicyState) -> Result<(), String> {
    let p = state.probabilities();
    let floor = state.gamma / state.arms.len() as f64;
    let sum: f64 = p.iter().sum();
    ensure((sum - 1.0).abs() <= 1e-12, || {
        format!("probabilities sum to {sum}")
    })?;
    ensure(
        p.iter().all(|&x| x >= floor - 1e-12 && x <= 1.0 + 1e-12),
        || format!("{p:?} below floor {floor}"),
    )?;
    ensure(
        state.weights.iter().all(|w| w.is_finite() && *w > 0.0),
        || format!("weights {:?}", state.weights),
    )
}

#[test]
fn c09_exp3_correctness() {
    report(
        "EXP3 correctness",
        (|| {
            let arms = PatternId::ALL.to_vec();
            let cases = std::cell::Cell::new(0usize);
            let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
                cases: 10_000,
                failure_persistence: None,
                rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
                ..ProptestConfig::default()
            });
            let strategy = (
                1usize..=5,
                0.0f64..=1.0,
                proptest::collection::vec((0usize..5, 0.0f64..=1.0, any::<u64>()), 1..60),
            );
            let result = runner.run(&strategy, |(k, gamma, steps)| {
                let mut state = PolicyState::new(arms[..k].to_vec(), gamma);
                exp3_invariants(&state).map_err(TestCaseError::fail)?;
                for (arm, reward, seed) in steps {
                    let arm = arm % k;
                    let eligible = vec![arms[arm], arms[(arm + 1) % k]];
                    let choice =
                        forge_core::coevolve::policy_sample(&state, &eligible, seed).unwrap();
                    state = policy_update(&state, choice, reward);
                    exp3_invariants(&state).map_err(TestCaseError::fail)?;
                }
                cases.set(cases.get() + 1);
                Ok(())
            });
            result.map_err(|e| e.to_string())?;

            let state = PolicyState::new(arms[..4].to_vec(), 0.1);
            let next = policy_update(
                &state,
                ArmChoice {
                    arm: arms[1],
                    probability: 0.25,
                },
                1.0,
            );
            let p2 = next.probabilities()[1];
            ensure((p2 - 0.26729).abs() < 1e-5, || format!("p2 = {p2}"))?;
            Ok(format!("{} random update sequences keep the simplex and gamma/K floor; worked example p2 = {p2:.5}", cases.get()))
        })(),
    );
}

#[test]
fn c10_round_trips() {
    report(
        "round trips",
        (|| {
            let mut files = 0;
            for group in ["projects", "micro"] {
                for dir in project_dirs(&common::fixtures().join(group)).unwrap() {
                    let snap = load_project(&dir).unwrap();
                    for f in &snap.files {
                        let m = parse_file(&f.content, &f.path, f.file_id).unwrap();
                        let again = parse_file(&render(&m), &f.path, f.file_id)
                            .map_err(|e| e.to_string())?;
                        ensure(m.structurally_eq(&again), || {
                            format!("{}/{}", dir.display(), f.path)
                        })?;
                        files += 1;
                    }
                }
            }
            for item in items() {
                let dir = tempfile::tempdir().unwrap();
                item.write(dir.path()).unwrap();
                let loaded = load_item(dir.path()).map_err(|e| format!("{}: {e}", item.item_id))?;
                ensure(loaded == *item, || {
                    format!("{}: load differs from packaged value", item.item_id)
                })?;

                let original: Vec<(String, String)> = item
                    .original
                    .iter()
                    .map(|f| (f.path.clone(), f.content.clone()))
                    .collect();
                let patched = item.patch.apply(&original).map_err(|e| e.to_string())?;
                let reverted = item.patch.revert(&patched).map_err(|e| e.to_string())?;
                let touched: Vec<(String, String)> = original
                    .iter()
                    .filter(|(p, _)| item.patch.files().contains(p))
                    .cloned()
                    .collect();
                ensure(!touched.is_empty() && reverted == touched, || {
                    format!("{}: revert is not byte-identical", item.item_id)
                })?;
            }
            Ok(format!(
            "{files} fixture files parse/render/parse equal; {n} items load equal; {n} patches revert byte-identically",
            n = items().len()
        ))
        })(),
    );
}

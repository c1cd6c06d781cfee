use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use forge_core::analysis::{golden_lines, mine_sites, QueryConfig};
use forge_core::benchkit::{
    self, corpus_metrics, generate_corpus, load_corpus, load_item, package, parse_input,
    prepare_projects, project_dirs, write_json, BenchError, CorpusConfig, Provenance, Seeds,
};
use forge_core::coevolve::{coevolve, CoevolveConfig, TrainConfig};
use forge_core::digest::{derive_seed, hex64};
use forge_core::harness::{
    capture_baseline, discover_or_synthesize, load_project, load_tests, HarnessError, TestSuite,
};
use forge_core::inject::catalog::{accepted_crashes, PatternId, CATALOG_VERSION};
use forge_core::inject::{
    apply_to_snapshot, inject_once, InjectionOutcome, InjectionPlan, InjectionPolicy, Patch,
};
use forge_core::json::to_canonical;
use forge_core::lang::{run, Limits};
use forge_core::pov::{fuzz, reproduce, FuzzConfig, FuzzTarget};
use forge_core::TOOL_VERSION;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Injects verified vulnerabilities into MiniC projects"
)]
struct Cli {
    /// Emit the command's report as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Suppress the banner on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SeedArg {
    #[arg(long, env = "FORGE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// Restrict to patterns with this CWE label (repeatable).
    #[arg(long = "cwe")]
    cwes: Vec<String>,
    /// Restrict to these patterns, e.g. P4_DIV_GUARD (repeatable).
    #[arg(long = "pattern")]
    patterns: Vec<String>,
    #[arg(long)]
    cross_file: bool,
    #[arg(long)]
    top_t: Option<usize>,
    #[arg(long)]
    max_changed_lines: Option<usize>,
}

#[derive(Args, Clone)]
struct FuzzArgs {
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a project and capture its baseline.
    Ingest {
        dir: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Print candidate injection sites.
    Mine {
        dir: PathBuf,
        #[arg(long)]
        cross_file: bool,
        /// Include sites no pattern applies to.
        #[arg(long)]
        all: bool,
    },
    /// Run one injection attempt and write the patch to a work dir.
    Inject {
        dir: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value = "forge-work")]
        out: PathBuf,
    },
    /// Fuzz for a PoV in an inject work dir (packaging an item) or an item dir.
    Pov {
        dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        fuzz: FuzzArgs,
    },
    /// Replay an item's PoV.
    Verify { item: PathBuf },
    /// Generate a corpus over every project under a directory.
    Batch {
        #[arg(long)]
        projects: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        fuzz: FuzzArgs,
    },
    /// Recompute corpus metrics by replaying every item.
    Metrics { corpus: PathBuf },
    /// Run the injector/detector loop.
    Coevolve {
        #[arg(long, default_value = "fixtures/projects")]
        projects: PathBuf,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long = "per-round", default_value_t = 20)]
        per_round: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Freeze the injector policy.
        #[arg(long)]
        stationary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a project's program on an input file.
    Run {
        dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn operational(message: impl Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn usage(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } | HarnessError::Baseline(_) | HarnessError::NoViableTests => {
                operational(e)
            }
            _ => usage(e),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Schema { .. } | BenchError::DigestMismatch(_) => usage(e),
            BenchError::Harness(h) => h.into(),
            _ => operational(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        print!("{}", to_canonical(value).expect("report serializes"));
    } else {
        print!("{}", text());
    }
}

fn policy_from(args: &PolicyArgs) -> Result<InjectionPolicy, Failure> {
    let mut policy = InjectionPolicy::default();
    if !args.patterns.is_empty() {
        policy.allowed_patterns = args
            .patterns
            .iter()
            .map(|p| PatternId::from_name(p).ok_or_else(|| usage(format!("unknown pattern `{p}`"))))
            .collect::<Result<_, _>>()?;
    }
    if !args.cwes.is_empty() {
        for c in &args.cwes {
            if !PatternId::ALL.iter().any(|p| p.cwe() == c) {
                return Err(usage(format!("no pattern carries CWE `{c}`")));
            }
        }
        policy
            .allowed_patterns
            .retain(|p| args.cwes.iter().any(|c| c == p.cwe()));
    }
    policy.require_cross_file = args.cross_file;
    if let Some(t) = args.top_t {
        policy.top_t = t;
    }
    if let Some(m) = args.max_changed_lines {
        policy.max_changed_lines = m;
    }
    Ok(policy)
}

fn fuzz_from(args: &FuzzArgs) -> FuzzConfig {
    let mut config = FuzzConfig::default();
    if let Some(b) = args.budget {
        config.budget = b;
    }
    config
}

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| operational(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| operational(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_file(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct IngestReport {
    project: String,
    files: Vec<String>,
    content_digest: String,
    bundled_tests: usize,
    tests: usize,
    covered_branches: usize,
    total_branches: usize,
    sites: usize,
}

fn ingest(dir: &Path, seed: u64, json: bool) -> Outcome {
    let snapshot = load_project(dir)?;
    let program = snapshot.program().map_err(HarnessError::from)?;
    let bundled = load_tests(&snapshot)?.cases.len();
    let suite = discover_or_synthesize(&snapshot, benchkit::SYNTH_BUDGET, seed)?;
    let baseline = capture_baseline(&snapshot, &suite)?;
    let report = IngestReport {
        project: snapshot.manifest.name.clone(),
        files: snapshot.manifest.files.clone(),
        content_digest: hex64(snapshot.content_digest),
        bundled_tests: bundled,
        tests: suite.cases.len(),
        covered_branches: baseline.union_coverage.len(),
        total_branches: program.branch_count(),
        sites: baseline.sites.len(),
    };
    emit(json, &report, || {
        format!(
            "project: {}\nfiles: {}\ndigest: {}\ntests: {} ({} bundled), all passing\ncoverage: {}/{} branches\nsites: {}\n",
            report.project,
            report.files.join(" "),
            report.content_digest,
            report.tests,
            report.bundled_tests,
            report.covered_branches,
            report.total_branches,
            report.sites
        )
    });
    Ok(())
}

fn mine(dir: &Path, cross_file: bool, all: bool, json: bool) -> Outcome {
    let snapshot = load_project(dir)?;
    let program = snapshot.program().map_err(HarnessError::from)?;
    let config = QueryConfig {
        require_cross_file: cross_file,
        require_compatible: !all,
        ..QueryConfig::default()
    };
    let sites = mine_sites(&program, &config);
    emit(json, &sites, || {
        let paths: Vec<_> = sites.iter().map(|s| s.path.clone()).collect();
        let lines = golden_lines(&program, &paths);
        lines
            .lines()
            .zip(&sites)
            .map(|(l, s)| {
                let pats: Vec<&str> = s.compatible_patterns.iter().map(|p| p.name()).collect();
                format!("#{} {l} [{}]\n", s.site_id, pats.join(","))
            })
            .collect()
    });
    Ok(())
}

#[derive(Serialize)]
struct InjectReport<'a> {
    outcome: &'a InjectionOutcome,
    work_dir: String,
}

fn inject(dir: &Path, seed: u64, policy: InjectionPolicy, out: &Path, json: bool) -> Outcome {
    let snapshot = load_project(dir)?;
    let suite = discover_or_synthesize(
        &snapshot,
        benchkit::SYNTH_BUDGET,
        derive_seed(seed, "tests", 0),
    )?;
    let baseline = capture_baseline(&snapshot, &suite)?;
    let outcome = inject_once(&snapshot, &baseline, &suite, &policy, seed);
    snapshot.write_to(&out.join("project"))?;
    let tests = out.join("tests");
    if tests.exists() {
        fs::remove_dir_all(&tests).map_err(|e| operational(format!("{}: {e}", tests.display())))?;
    }
    suite.write(&tests)?;
    write_json(&out.join("policy.json"), &policy)?;
    write_json(&out.join("outcome.json"), &outcome)?;
    let report = InjectReport {
        outcome: &outcome,
        work_dir: out.display().to_string(),
    };
    match &outcome {
        InjectionOutcome::Verified { plan, patch } => {
            write_json(&out.join("plan.json"), plan.as_ref())?;
            write_file(&out.join("patch.diff"), &patch.diff)?;
            emit(json, &report, || {
                format!(
                    "outcome: VERIFIED\npattern: {}\ncwe: {}\nsite: {}\nwork dir: {}\n{}",
                    plan.pattern,
                    plan.cwe,
                    plan.site.site_id,
                    out.display(),
                    patch.diff
                )
            });
            Ok(())
        }
        InjectionOutcome::NoSite => {
            emit(json, &report, String::new);
            Err(operational("no eligible site"))
        }
        other => {
            emit(json, &report, String::new);
            let detail = match other {
                InjectionOutcome::RejectedReview { report, .. } => report.failed_rules().join(","),
                InjectionOutcome::RejectedVerify { report, .. } => report.reasons.join("; "),
                InjectionOutcome::TransformFailed { reason } => reason.clone(),
                _ => String::new(),
            };
            Err(operational(format!("{}: {detail}", other.label())))
        }
    }
}

#[derive(Serialize)]
struct PovReport {
    found: bool,
    executions_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<forge_core::pov::PovRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    item_dir: Option<String>,
}

fn pov_text(r: &PovReport) -> String {
    match &r.record {
        Some(rec) => format!(
            "found: true\nexecutions: {}\nsignature: {} {}:{} in {}\ninput: {}minimized: {}{}",
            r.executions_used,
            rec.signature.kind.name(),
            rec.signature.file,
            rec.signature.line,
            rec.signature.function,
            benchkit::render_input(&rec.input),
            benchkit::render_input(&rec.minimized_input),
            r.item_dir
                .as_ref()
                .map(|d| format!("item: {d}\n"))
                .unwrap_or_default()
        ),
        None => format!("found: false\nexecutions: {}\n", r.executions_used),
    }
}

fn pov(dir: &Path, seed: Option<u64>, fuzz_args: &FuzzArgs, json: bool) -> Outcome {
    if dir.join("item.json").is_file() {
        let item = load_item(dir)?;
        let program = item.patched_program()?;
        let site = &item.labels.injected_site;
        let target = FuzzTarget {
            file: site.file.clone(),
            line: site.line,
            crash_kinds: accepted_crashes(item.labels.pattern_id, site.sink_kind).to_vec(),
            constants: Vec::new(),
        };
        let config = FuzzConfig {
            seed: seed.unwrap_or(item.provenance.fuzz.seed),
            budget: fuzz_args.budget.unwrap_or(item.provenance.fuzz.budget),
            ..item.provenance.fuzz.clone()
        };
        return finish_pov(
            fuzz(&program, &target, &item.harness.inputs(), &config),
            None,
            json,
        );
    }
    let snapshot = load_project(&dir.join("project"))?;
    let suite = TestSuite::load(&dir.join("tests"))?;
    let plan: InjectionPlan = read_json(&dir.join("plan.json"))
        .map_err(|f| usage(format!("{} (is this an inject work dir?)", f.message)))?;
    let policy: InjectionPolicy = read_json(&dir.join("policy.json"))?;
    let patch = Patch::from_diff(&read_file(&dir.join("patch.diff"))?).map_err(usage)?;
    let patched = apply_to_snapshot(&snapshot, &patch).map_err(usage)?;
    let program = patched.program().map_err(HarnessError::from)?;
    let config = FuzzConfig {
        seed: seed.unwrap_or_else(|| derive_seed(plan.seed, "fuzz", 0)),
        ..fuzz_from(fuzz_args)
    };
    let target = FuzzTarget::from_plan(&plan, &patch);
    let result = fuzz(&program, &target, &suite.inputs(), &config);
    let item_dir = match &result {
        Ok(record) => {
            let provenance = Provenance {
                tool_version: TOOL_VERSION.to_string(),
                catalog_version: CATALOG_VERSION.to_string(),
                seeds: Seeds {
                    attempt: plan.seed,
                    fuzz: config.seed,
                },
                policy,
                fuzz: config.clone(),
            };
            let item_dir = dir.join("item");
            package(
                &snapshot, &plan, &patch, record, &suite, provenance, &item_dir,
            )?;
            Some(item_dir.display().to_string())
        }
        Err(_) => None,
    };
    finish_pov(result, item_dir, json)
}

fn finish_pov(
    result: Result<forge_core::pov::PovRecord, forge_core::pov::NotFound>,
    item_dir: Option<String>,
    json: bool,
) -> Outcome {
    let report = match result {
        Ok(record) => PovReport {
            found: true,
            executions_used: record.executions_used,
            record: Some(record),
            item_dir,
        },
        Err(e) => PovReport {
            found: false,
            executions_used: e.executions_used,
            record: None,
            item_dir: None,
        },
    };
    emit(json, &report, || pov_text(&report));
    if report.found {
        Ok(())
    } else {
        Err(operational(format!(
            "no PoV found after {} executions",
            report.executions_used
        )))
    }
}

#[derive(Serialize)]
struct VerifyOutput {
    item_id: String,
    #[serde(rename = "match")]
    matched: bool,
    unpatched_crashes: bool,
    actual: forge_core::lang::ExecutionResult,
}

fn verify(dir: &Path, json: bool) -> Outcome {
    let item = load_item(dir)?;
    let program = item.patched_program()?;
    let r = reproduce(&program, &item.pov.minimized_input, &item.pov.signature);
    let original = item.snapshot()?.program().map_err(HarnessError::from)?;
    let unpatched_crashes = run(&original, &item.pov.minimized_input, Limits::default()).crashed();
    let out = VerifyOutput {
        item_id: item.item_id.clone(),
        matched: r.matched,
        unpatched_crashes,
        actual: r.actual,
    };
    emit(json, &out, || {
        format!(
            "item: {}\nmatch: {}\nunpatched crashes: {}\n",
            out.item_id, out.matched, out.unpatched_crashes
        )
    });
    if out.matched && !out.unpatched_crashes {
        Ok(())
    } else {
        Err(operational("PoV does not reproduce"))
    }
}

fn metrics_text(m: &benchkit::CorpusMetrics) -> String {
    let mut s = format!(
        "attempts: {}\nverified: {}\nwith pov: {}\nitems: {}\ninjection validity: {:.4}\npov yield: {:.4}\npov reproducibility: {:.4}\nreview pass rate: {:.4}\ncwe entropy: {:.4} bits\nmean depth: {:.4}\n",
        m.attempts,
        m.verified,
        m.with_pov,
        m.items,
        m.injection_validity_rate,
        m.pov_yield,
        m.pov_reproducibility,
        m.review_pass_rate,
        m.cwe_entropy_bits,
        m.mean_depth
    );
    for (cwe, n) in &m.cwe_counts {
        s.push_str(&format!("cwe {cwe}: {n}\n"));
    }
    for (d, n) in &m.depth_histogram {
        s.push_str(&format!("depth {d}: {n}\n"));
    }
    s
}

fn banner(quiet: bool, what: &str, settings: &[(&str, String)]) {
    if quiet {
        return;
    }
    let mut line = format!("forge {TOOL_VERSION} {what}");
    for (k, v) in settings {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

/// `report.json` plus every generated item under `items/`.
fn write_coevolve(out: &Path, run: &forge_core::coevolve::CoevolveRun) -> Outcome {
    fs::create_dir_all(out).map_err(|e| operational(format!("{}: {e}", out.display())))?;
    let items = out.join("items");
    if items.exists() {
        fs::remove_dir_all(&items).map_err(|e| operational(format!("{}: {e}", items.display())))?;
    }
    for item in &run.items {
        item.write(&items.join(&item.item_id))?;
    }
    write_json(&out.join("report.json"), &run.report)?;
    Ok(())
}

fn execute(cli: Cli) -> Outcome {
    let json = cli.json;
    match cli.command {
        Command::Ingest { dir, seed } => {
            banner(cli.quiet, "ingest", &[("seed", seed.seed.to_string())]);
            ingest(&dir, seed.seed, json)
        }
        Command::Mine {
            dir,
            cross_file,
            all,
        } => {
            banner(
                cli.quiet,
                "mine",
                &[
                    ("cross_file", cross_file.to_string()),
                    ("all", all.to_string()),
                ],
            );
            mine(&dir, cross_file, all, json)
        }
        Command::Inject {
            dir,
            seed,
            policy,
            out,
        } => {
            let policy = policy_from(&policy)?;
            banner(
                cli.quiet,
                "inject",
                &[
                    ("seed", seed.seed.to_string()),
                    (
                        "policy",
                        to_canonical(&policy).unwrap_or_default().replace('\n', ""),
                    ),
                ],
            );
            inject(&dir, seed.seed, policy, &out, json)
        }
        Command::Pov { dir, seed, fuzz } => {
            let show = |v: Option<String>| v.unwrap_or_else(|| "recorded".into());
            banner(
                cli.quiet,
                "pov",
                &[
                    ("seed", show(seed.map(|s| s.to_string()))),
                    ("budget", show(fuzz.budget.map(|b| b.to_string()))),
                ],
            );
            pov(&dir, seed, &fuzz, json)
        }
        Command::Verify { item } => {
            banner(cli.quiet, "verify", &[]);
            verify(&item, json)
        }
        Command::Batch {
            projects,
            n,
            seed,
            out,
            jobs,
            policy,
            fuzz,
        } => {
            let config = CorpusConfig {
                n_attempts: n,
                policy: policy_from(&policy)?,
                fuzz: fuzz_from(&fuzz),
                seed: seed.seed,
                jobs: jobs.max(1),
            };
            banner(
                cli.quiet,
                "batch",
                &[
                    ("seed", seed.seed.to_string()),
                    ("n", n.to_string()),
                    ("jobs", config.jobs.to_string()),
                    ("fuzz_budget", config.fuzz.budget.to_string()),
                ],
            );
            let dirs = project_dirs(&projects)?;
            if dirs.is_empty() {
                return Err(usage(format!("no projects under {}", projects.display())));
            }
            let corpus = generate_corpus(&dirs, &config, &out)?;
            emit(json, &corpus.metrics, || metrics_text(&corpus.metrics));
            Ok(())
        }
        Command::Metrics { corpus } => {
            banner(cli.quiet, "metrics", &[]);
            let (items, attempts) = load_corpus(&corpus)?;
            let metrics = corpus_metrics(&items, &attempts);
            emit(json, &metrics, || metrics_text(&metrics));
            Ok(())
        }
        Command::Coevolve {
            projects,
            rounds,
            per_round,
            k,
            seed,
            stationary,
            out,
        } => {
            let config = CoevolveConfig {
                rounds,
                per_round,
                k,
                seed: seed.seed,
                update_policy: !stationary,
                train: TrainConfig::default(),
                ..CoevolveConfig::default()
            };
            banner(
                cli.quiet,
                "coevolve",
                &[
                    ("seed", seed.seed.to_string()),
                    ("rounds", rounds.to_string()),
                    ("per_round", per_round.to_string()),
                    ("k", k.to_string()),
                ],
            );
            let dirs = project_dirs(&projects)?;
            let prepared = prepare_projects(&dirs, seed.seed)?;
            let result = coevolve(&prepared, &config).map_err(operational)?;
            if let Some(out) = out {
                write_coevolve(&out, &result)?;
            }
            emit(json, &result.report, || {
                result
                    .report
                    .rounds
                    .iter()
                    .map(|r| {
                        format!(
                            "round {}: items={} recall@{}={} loss={}\n",
                            r.round,
                            r.items_generated,
                            k,
                            r.recall_at_k.map_or("n/a".into(), |v| format!("{v:.4}")),
                            r.loss_after.map_or("n/a".into(), |v| format!("{v:.6}")),
                        )
                    })
                    .collect()
            });
            Ok(())
        }
        Command::Run { dir, input } => {
            banner(cli.quiet, "run", &[]);
            let snapshot = load_project(&dir)?;
            let program = snapshot.program().map_err(HarnessError::from)?;
            let values = parse_input(&read_file(&input)?).map_err(usage)?;
            let r = run(&program, &values, Limits::default());
            emit(json, &r, || {
                let mut s: String = r.outputs.iter().map(|o| format!("{o}\n")).collect();
                s.push_str(&format!(
                    "status: {}\n",
                    serde_json::to_value(r.status)
                        .expect("status")
                        .as_str()
                        .unwrap_or("")
                ));
                if let Some(v) = &r.violation {
                    s.push_str(&format!(
                        "violation: {} at {}:{} in {}\n",
                        v.kind.name(),
                        v.file,
                        v.line,
                        v.function
                    ));
                }
                s
            });
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

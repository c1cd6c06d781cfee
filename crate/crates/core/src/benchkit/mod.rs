//! Benchmark items on disk, batch corpus generation and corpus metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{SinkKind, SourceKind};
use crate::digest::{derive_seed, digest64, hex64};
use crate::harness::{
    capture_baseline, content_digest, discover_or_synthesize, io_err, load_project, Baseline,
    HarnessError, Manifest, ProjectSnapshot, SourceFile, TestSuite,
};
use crate::inject::catalog::{cwe_crashes, PatternId, CATALOG_VERSION};
use crate::inject::{
    apply_to_snapshot, inject_once, InjectionOutcome, InjectionPlan, InjectionPolicy, Patch,
};
use crate::json::to_canonical;
use crate::lang::{run, CrashSignature, Limits, Program};
use crate::pov::{fuzz, reproduce, FuzzConfig, FuzzTarget, PovRecord, TriggerTrace};
use crate::TOOL_VERSION;

/// Test-synthesis budget used when a project's own tests are too thin.
pub const SYNTH_BUDGET: usize = 2000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),
    #[error("inconsistent item: {0}")]
    Consistency(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

fn bio(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(path: &str, message: impl ToString) -> BenchError {
    BenchError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// The injected sink, located so that it can be found again on the patched
/// program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedSite {
    pub file: String,
    pub line: u32,
    pub sink_kind: SinkKind,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub cwe: String,
    pub pattern_id: PatternId,
    pub affected_files: Vec<String>,
    pub trigger_path: TriggerTrace,
    pub cross_file_depth: u32,
    pub injected_site: InjectedSite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub attempt: u64,
    pub fuzz: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub catalog_version: String,
    pub seeds: Seeds,
    pub policy: InjectionPolicy,
    pub fuzz: FuzzConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub project: Manifest,
    pub snapshot_digest: String,
    pub original: Vec<SourceFile>,
    pub patch: Patch,
    pub harness: TestSuite,
    pub pov: PovRecord,
    pub labels: Labels,
    pub provenance: Provenance,
}

/// `item.json`: everything not stored in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemManifest {
    item_id: String,
    project: Manifest,
    snapshot_digest: String,
    signature: CrashSignature,
    executions_used: usize,
    labels: LabelsOnDisk,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsOnDisk {
    cwe: String,
    pattern_id: PatternId,
    affected_files: Vec<String>,
    cross_file_depth: u32,
    injected_site: InjectedSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceFile {
    #[serde(flatten)]
    trace: TriggerTrace,
    covered_branch_count: usize,
}

pub fn item_id(snapshot_digest: u64, patch: &Patch, pov_input: &[i64]) -> String {
    let mut bytes = snapshot_digest.to_be_bytes().to_vec();
    bytes.extend_from_slice(patch.diff.as_bytes());
    for v in pov_input {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    hex64(digest64(&bytes))
}

pub fn render_input(input: &[i64]) -> String {
    let parts: Vec<String> = input.iter().map(|v| v.to_string()).collect();
    format!("{}\n", parts.join(" "))
}

pub fn parse_input(text: &str) -> Result<Vec<i64>, String> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<i64>()
                .map_err(|e| format!("bad integer `{t}`: {e}"))
        })
        .collect()
}

impl BenchmarkItem {
    pub fn snapshot(&self) -> Result<ProjectSnapshot, HarnessError> {
        let sources: Vec<(&str, &str)> = self
            .original
            .iter()
            .map(|f| (f.path.as_str(), f.content.as_str()))
            .collect();
        ProjectSnapshot::from_sources(&self.project.name, &self.project.entry, &sources)
    }

    pub fn patched_snapshot(&self) -> Result<ProjectSnapshot, BenchError> {
        let snapshot = self.snapshot()?;
        apply_to_snapshot(&snapshot, &self.patch)
            .map_err(|e| BenchError::Consistency(e.to_string()))
    }

    pub fn patched_program(&self) -> Result<Program, BenchError> {
        Ok(self
            .patched_snapshot()?
            .program()
            .map_err(HarnessError::from)?)
    }

    fn check_invariants(&self) -> Result<(), BenchError> {
        if self.labels.affected_files != self.patch.files() {
            return Err(schema(
                "labels.affected_files",
                "does not match the files in patch.diff",
            ));
        }
        if !cwe_crashes(&self.labels.cwe).contains(&self.labels.trigger_path.crash_site.kind) {
            return Err(schema(
                "labels.cwe",
                format!(
                    "{} is inconsistent with crash kind {}",
                    self.labels.cwe,
                    self.labels.trigger_path.crash_site.kind.name()
                ),
            ));
        }
        if self.labels.pattern_id.cwe() != self.labels.cwe {
            return Err(schema(
                "labels.pattern_id",
                "pattern's CWE differs from labels.cwe",
            ));
        }
        if self.labels.cross_file_depth as usize != self.labels.trigger_path.files_on_path.len() {
            return Err(schema(
                "labels.cross_file_depth",
                "differs from the trigger path",
            ));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir).map_err(bio(dir))?;
        let manifest = ItemManifest {
            item_id: self.item_id.clone(),
            project: self.project.clone(),
            snapshot_digest: self.snapshot_digest.clone(),
            signature: self.pov.signature.clone(),
            executions_used: self.pov.executions_used,
            labels: LabelsOnDisk {
                cwe: self.labels.cwe.clone(),
                pattern_id: self.labels.pattern_id,
                affected_files: self.labels.affected_files.clone(),
                cross_file_depth: self.labels.cross_file_depth,
                injected_site: self.labels.injected_site.clone(),
            },
            provenance: self.provenance.clone(),
        };
        let trace = TraceFile {
            covered_branch_count: self.pov.trace.covered_branches.len(),
            trace: self.pov.trace.clone(),
        };
        let original = dir.join("original");
        if original.exists() {
            fs::remove_dir_all(&original).map_err(bio(&original))?;
        }
        self.snapshot()?.write_to(&original)?;
        let tests = dir.join("tests");
        if tests.exists() {
            fs::remove_dir_all(&tests).map_err(bio(&tests))?;
        }
        self.harness.write(&tests)?;
        let files = [
            (
                "item.json",
                to_canonical(&manifest).expect("manifest serializes"),
            ),
            ("patch.diff", self.patch.diff.clone()),
            ("pov.input", render_input(&self.pov.input)),
            ("pov.min.input", render_input(&self.pov.minimized_input)),
            (
                "trace.json",
                to_canonical(&trace).expect("trace serializes"),
            ),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(bio(&path))?;
        }
        Ok(())
    }
}

/// Packages a verified outcome and its PoV into `out_dir`.
pub fn package(
    snapshot: &ProjectSnapshot,
    plan: &InjectionPlan,
    patch: &Patch,
    pov: &PovRecord,
    suite: &TestSuite,
    provenance: Provenance,
    out_dir: &Path,
) -> Result<BenchmarkItem, BenchError> {
    let item = build_item(snapshot, plan, patch, pov, suite, provenance)?;
    item.write(out_dir)?;
    Ok(item)
}

/// Builds and checks an item without writing it.
pub fn build_item(
    snapshot: &ProjectSnapshot,
    plan: &InjectionPlan,
    patch: &Patch,
    pov: &PovRecord,
    suite: &TestSuite,
    provenance: Provenance,
) -> Result<BenchmarkItem, BenchError> {
    let patched =
        apply_to_snapshot(snapshot, patch).map_err(|e| BenchError::Consistency(e.to_string()))?;
    let patched = patched.program().map_err(HarnessError::from)?;
    let unpatched = snapshot.program().map_err(HarnessError::from)?;
    for (what, input) in [
        ("input", &pov.input),
        ("minimized input", &pov.minimized_input),
    ] {
        if !reproduce(&patched, input, &pov.signature).matched {
            return Err(BenchError::Consistency(format!(
                "PoV {what} does not reproduce"
            )));
        }
        if run(&unpatched, input, Limits::default()).crashed() {
            return Err(BenchError::Consistency(format!(
                "PoV {what} crashes the unpatched program"
            )));
        }
    }
    let mut harness = suite.clone();
    harness.cases.sort_by(|a, b| a.name.cmp(&b.name));
    let sink = plan.patched_sink(patch);
    let labels = Labels {
        cwe: plan.cwe.clone(),
        pattern_id: plan.pattern,
        affected_files: patch.files(),
        trigger_path: pov.trace.clone(),
        cross_file_depth: pov.trace.files_on_path.len() as u32,
        injected_site: InjectedSite {
            file: sink.file,
            line: sink.line,
            sink_kind: sink.kind,
            source_kind: plan.site.path.source_kind,
        },
    };
    let item = BenchmarkItem {
        item_id: item_id(snapshot.content_digest, patch, &pov.minimized_input),
        project: Manifest {
            tests: None,
            ..snapshot.manifest.clone()
        },
        snapshot_digest: hex64(snapshot.content_digest),
        original: snapshot.files.clone(),
        patch: patch.clone(),
        harness,
        pov: pov.clone(),
        labels,
        provenance,
    };
    item.check_invariants()
        .map_err(|e| BenchError::Consistency(e.to_string()))?;
    Ok(item)
}

fn read_text(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(bio(path))
}

fn read_json<T: DeserializeOwned>(path: &Path, file: &str) -> Result<T, BenchError> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.path().to_string();
        schema(&format!("{file}:{inner}"), e.into_inner())
    })
}

pub fn load_item(dir: &Path) -> Result<BenchmarkItem, BenchError> {
    let manifest: ItemManifest = read_json(&dir.join("item.json"), "item.json")?;
    let trace: TraceFile = read_json(&dir.join("trace.json"), "trace.json")?;
    if trace.covered_branch_count != trace.trace.covered_branches.len() {
        return Err(schema(
            "trace.json:covered_branch_count",
            "differs from covered_branches",
        ));
    }
    let snapshot = load_project(&dir.join("original"))?;
    if hex64(snapshot.content_digest) != manifest.snapshot_digest {
        return Err(BenchError::DigestMismatch(format!(
            "original/ hashes to {}, item.json records {}",
            hex64(snapshot.content_digest),
            manifest.snapshot_digest
        )));
    }
    if snapshot.manifest != manifest.project {
        return Err(schema(
            "item.json:project",
            "differs from original/forge.json",
        ));
    }
    let diff = read_text(&dir.join("patch.diff"))?;
    let patch = Patch::from_diff(&diff).map_err(|e| schema("patch.diff", e))?;
    let harness = TestSuite::load(&dir.join("tests"))?;
    let input =
        parse_input(&read_text(&dir.join("pov.input"))?).map_err(|e| schema("pov.input", e))?;
    let minimized_input = parse_input(&read_text(&dir.join("pov.min.input"))?)
        .map_err(|e| schema("pov.min.input", e))?;
    let expected_id = item_id(snapshot.content_digest, &patch, &minimized_input);
    if expected_id != manifest.item_id {
        return Err(BenchError::DigestMismatch(format!(
            "contents hash to item id {expected_id}, item.json records {}",
            manifest.item_id
        )));
    }
    let l = manifest.labels;
    let item = BenchmarkItem {
        item_id: manifest.item_id,
        project: manifest.project,
        snapshot_digest: manifest.snapshot_digest,
        original: snapshot.files,
        patch,
        harness,
        pov: PovRecord {
            input,
            signature: manifest.signature,
            minimized_input,
            trace: trace.trace.clone(),
            executions_used: manifest.executions_used,
        },
        labels: Labels {
            cwe: l.cwe,
            pattern_id: l.pattern_id,
            affected_files: l.affected_files,
            trigger_path: trace.trace,
            cross_file_depth: l.cross_file_depth,
            injected_site: l.injected_site,
        },
        provenance: manifest.provenance,
    };
    item.check_invariants()?;
    if content_digest(&item.original) != snapshot.content_digest {
        return Err(BenchError::DigestMismatch("original files".into()));
    }
    Ok(item)
}

/// One batch attempt, as recorded in `attempts.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub index: usize,
    pub project: String,
    pub seed: u64,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternId>,
    pub reviewed: bool,
    pub review_passed: bool,
    pub verified: bool,
    pub pov_found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub attempts: usize,
    pub verified: usize,
    pub with_pov: usize,
    pub items: usize,
    pub injection_validity_rate: f64,
    pub pov_yield: f64,
    pub pov_reproducibility: f64,
    pub review_pass_rate: f64,
    pub cwe_counts: BTreeMap<String, usize>,
    pub cwe_entropy_bits: f64,
    pub depth_histogram: BTreeMap<u32, usize>,
    pub mean_depth: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Shannon entropy in bits of a label multiset given by its counts.
pub fn entropy_bits<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    if counts.len() <= 1 {
        return 0.0;
    }
    let total: usize = counts.iter().sum();
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Replays a stored PoV: both inputs must reproduce on the patched program
/// and neither may crash the original.
pub fn replay(item: &BenchmarkItem) -> bool {
    let Ok(patched) = item.patched_program() else {
        return false;
    };
    let Some(original) = item.snapshot().ok().and_then(|s| s.program().ok()) else {
        return false;
    };
    [&item.pov.input, &item.pov.minimized_input]
        .into_iter()
        .all(|input| {
            reproduce(&patched, input, &item.pov.signature).matched
                && !run(&original, input, Limits::default()).crashed()
        })
}

pub fn corpus_metrics(items: &[BenchmarkItem], attempts: &[AttemptRecord]) -> CorpusMetrics {
    let verified = attempts.iter().filter(|a| a.verified).count();
    let with_pov = attempts.iter().filter(|a| a.pov_found).count();
    let reviewed = attempts.iter().filter(|a| a.reviewed).count();
    let review_passed = attempts.iter().filter(|a| a.review_passed).count();
    let reproduced = items.iter().filter(|i| replay(i)).count();
    let mut cwe_counts = BTreeMap::new();
    let mut depth_histogram = BTreeMap::new();
    for item in items {
        *cwe_counts.entry(item.labels.cwe.clone()).or_insert(0) += 1;
        *depth_histogram
            .entry(item.labels.cross_file_depth)
            .or_insert(0) += 1;
    }
    let depth_sum: u64 = items.iter().map(|i| i.labels.cross_file_depth as u64).sum();
    CorpusMetrics {
        attempts: attempts.len(),
        verified,
        with_pov,
        items: items.len(),
        injection_validity_rate: ratio(verified, attempts.len()),
        pov_yield: ratio(with_pov, verified),
        pov_reproducibility: ratio(reproduced, items.len()),
        review_pass_rate: ratio(review_passed, reviewed),
        cwe_entropy_bits: entropy_bits(cwe_counts.values().copied()),
        cwe_counts,
        depth_histogram,
        mean_depth: if items.is_empty() {
            0.0
        } else {
            depth_sum as f64 / items.len() as f64
        },
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub n_attempts: usize,
    pub policy: InjectionPolicy,
    pub fuzz: FuzzConfig,
    pub seed: u64,
    /// Worker threads; 1 runs inline. Output bytes do not depend on it.
    pub jobs: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_attempts: 100,
            policy: InjectionPolicy::default(),
            fuzz: FuzzConfig::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

/// A project ready for injection: snapshot, the suite used as the oracle,
/// and its baseline.
#[derive(Debug, Clone)]
pub struct PreparedProject {
    pub snapshot: ProjectSnapshot,
    pub suite: TestSuite,
    pub baseline: Baseline,
}

pub fn prepare_project(
    snapshot: ProjectSnapshot,
    seed: u64,
) -> Result<PreparedProject, HarnessError> {
    let suite = discover_or_synthesize(&snapshot, SYNTH_BUDGET, seed)?;
    let baseline = capture_baseline(&snapshot, &suite)?;
    Ok(PreparedProject {
        snapshot,
        suite,
        baseline,
    })
}

/// Result of one attempt before packaging.
#[derive(Debug, Clone)]
pub struct AttemptResult {
    pub record: AttemptRecord,
    pub item: Option<BenchmarkItem>,
}

/// inject, fuzz, minimize and build one item. Writes nothing.
pub fn run_attempt(
    project: &PreparedProject,
    index: usize,
    seed: u64,
    policy: &InjectionPolicy,
    fuzz_config: &FuzzConfig,
) -> AttemptResult {
    let outcome = inject_once(
        &project.snapshot,
        &project.baseline,
        &project.suite,
        policy,
        seed,
    );
    finish_attempt(project, index, seed, outcome, policy, fuzz_config)
}

/// Fuzzes and builds the item for an injection outcome.
pub fn finish_attempt(
    project: &PreparedProject,
    index: usize,
    seed: u64,
    outcome: InjectionOutcome,
    policy: &InjectionPolicy,
    fuzz_config: &FuzzConfig,
) -> AttemptResult {
    let mut record = AttemptRecord {
        index,
        project: project.snapshot.manifest.name.clone(),
        seed,
        outcome: outcome.label().to_string(),
        pattern: None,
        reviewed: false,
        review_passed: false,
        verified: false,
        pov_found: false,
        item_id: None,
        detail: String::new(),
    };
    let (plan, patch) = match outcome {
        InjectionOutcome::Verified { plan, patch } => (plan, patch),
        InjectionOutcome::RejectedReview { plan, report } => {
            record.pattern = Some(plan.pattern);
            record.reviewed = true;
            record.detail = report.failed_rules().join(",");
            return AttemptResult { record, item: None };
        }
        InjectionOutcome::RejectedVerify { plan, report } => {
            record.pattern = Some(plan.pattern);
            record.reviewed = true;
            record.review_passed = true;
            record.detail = report.reasons.join("; ");
            return AttemptResult { record, item: None };
        }
        InjectionOutcome::TransformFailed { reason } => {
            record.detail = reason;
            return AttemptResult { record, item: None };
        }
        InjectionOutcome::NoSite => return AttemptResult { record, item: None },
    };
    record.pattern = Some(plan.pattern);
    record.reviewed = true;
    record.review_passed = true;
    record.verified = true;
    let patched = apply_to_snapshot(&project.snapshot, &patch)
        .ok()
        .and_then(|s| s.program().ok())
        .expect("verified patch applies and links");
    let fuzz_seed = derive_seed(seed, "fuzz", 0);
    let config = FuzzConfig {
        seed: fuzz_seed,
        ..fuzz_config.clone()
    };
    let target = FuzzTarget::from_plan(&plan, &patch);
    let pov = match fuzz(&patched, &target, &project.suite.inputs(), &config) {
        Ok(pov) => pov,
        Err(e) => {
            record.outcome = "NO_POV".into();
            record.detail = e.to_string();
            return AttemptResult { record, item: None };
        }
    };
    record.pov_found = true;
    let provenance = Provenance {
        tool_version: TOOL_VERSION.to_string(),
        catalog_version: CATALOG_VERSION.to_string(),
        seeds: Seeds {
            attempt: seed,
            fuzz: fuzz_seed,
        },
        policy: policy.clone(),
        fuzz: config,
    };
    match build_item(
        &project.snapshot,
        &plan,
        &patch,
        &pov,
        &project.suite,
        provenance,
    ) {
        Ok(item) => {
            record.item_id = Some(item.item_id.clone());
            AttemptResult {
                record,
                item: Some(item),
            }
        }
        Err(e) => {
            record.outcome = "INCONSISTENT".into();
            record.detail = e.to_string();
            AttemptResult { record, item: None }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub items: Vec<BenchmarkItem>,
    pub attempts: Vec<AttemptRecord>,
    pub metrics: CorpusMetrics,
}

/// Round-robins `n_attempts` over `projects`. Attempt `i` uses the seed
/// `derive_seed(seed, "attempt", i)`. An item identical to an earlier one is
/// recorded as `DUPLICATE` and not packaged again.
pub fn generate_corpus_from(projects: &[PreparedProject], config: &CorpusConfig) -> Corpus {
    let work = |i: usize| {
        let project = &projects[i % projects.len()];
        run_attempt(
            project,
            i,
            derive_seed(config.seed, "attempt", i as u64),
            &config.policy,
            &config.fuzz,
        )
    };
    let results: Vec<AttemptResult> = if projects.is_empty() {
        Vec::new()
    } else if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .expect("thread pool");
        pool.install(|| (0..config.n_attempts).into_par_iter().map(work).collect())
    } else {
        (0..config.n_attempts).map(work).collect()
    };
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    let mut attempts = Vec::new();
    for mut r in results {
        if let Some(item) = r.item {
            if seen.insert(item.item_id.clone()) {
                items.push(item);
            } else {
                r.record.outcome = "DUPLICATE".into();
            }
        }
        attempts.push(r.record);
    }
    let metrics = corpus_metrics(&items, &attempts);
    Corpus {
        items,
        attempts,
        metrics,
    }
}

/// Loads every project dir, prepares it with a per-project seed and runs the
/// batch.
pub fn prepare_projects(dirs: &[PathBuf], seed: u64) -> Result<Vec<PreparedProject>, HarnessError> {
    dirs.iter()
        .enumerate()
        .map(|(i, d)| prepare_project(load_project(d)?, derive_seed(seed, "tests", i as u64)))
        .collect()
}

/// Sorted subdirectories of `root` that hold a `forge.json`.
pub fn project_dirs(root: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("forge.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn generate_corpus(
    dirs: &[PathBuf],
    config: &CorpusConfig,
    out_dir: &Path,
) -> Result<Corpus, BenchError> {
    let projects = prepare_projects(dirs, config.seed)?;
    let corpus = generate_corpus_from(&projects, config);
    write_corpus(&corpus, out_dir)?;
    Ok(corpus)
}

/// Writes `items/<id>/`, `attempts.json` and `metrics.json`.
pub fn write_corpus(corpus: &Corpus, out_dir: &Path) -> Result<(), BenchError> {
    let items_dir = out_dir.join("items");
    // Items left by an earlier run would otherwise be loaded with this one.
    if items_dir.exists() {
        fs::remove_dir_all(&items_dir).map_err(bio(&items_dir))?;
    }
    fs::create_dir_all(&items_dir).map_err(bio(&items_dir))?;
    for item in &corpus.items {
        item.write(&items_dir.join(&item.item_id))?;
    }
    write_json(&out_dir.join("attempts.json"), &corpus.attempts)?;
    write_json(&out_dir.join("metrics.json"), &corpus.metrics)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let text = to_canonical(value).map_err(|e| schema(&path.display().to_string(), e))?;
    fs::write(path, text).map_err(bio(path))
}

/// Reads a corpus written by [`write_corpus`], items sorted by id.
pub fn load_corpus(dir: &Path) -> Result<(Vec<BenchmarkItem>, Vec<AttemptRecord>), BenchError> {
    let attempts: Vec<AttemptRecord> = read_json(&dir.join("attempts.json"), "attempts.json")?;
    let items_dir = dir.join("items");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&items_dir)
        .map_err(bio(&items_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let items = dirs
        .iter()
        .map(|d| load_item(d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((items, attempts))
}

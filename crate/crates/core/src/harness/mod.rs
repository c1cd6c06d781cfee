//! Project ingestion, test execution and synthesis, and baseline capture.

mod suite;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{mine_sites, CandidateSite, QueryConfig};
use crate::digest::digest64;
use crate::lang::{
    link, parse_file, run, BranchId, Limits, LinkError, Module, ParseError, Program, Status,
};

pub use suite::{parse_test, render_test, ExpectStatus, TestCase, TestSuite};

/// Share of static branch ids existing tests must cover before synthesis is
/// skipped.
pub const COVERAGE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("test file {file}: {message}")]
    TestFormat { file: String, message: String },
    #[error("no viable tests found within the budget")]
    NoViableTests,
    #[error("baseline rejected: {0}")]
    Baseline(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub entry: String,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub file_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectSnapshot {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub files: Vec<SourceFile>,
    pub content_digest: u64,
}

fn valid_path(p: &str) -> bool {
    !p.is_empty()
        && !p.starts_with('/')
        && !p.contains('\\')
        && p.ends_with(".mc")
        && p.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}

/// Digest over every file's path and bytes, in manifest order.
pub fn content_digest(files: &[SourceFile]) -> u64 {
    let mut bytes = Vec::new();
    for f in files {
        bytes.extend_from_slice(f.path.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&(f.content.len() as u64).to_be_bytes());
        bytes.extend_from_slice(f.content.as_bytes());
    }
    digest64(&bytes)
}

impl ProjectSnapshot {
    /// Builds a snapshot from in-memory sources; files keep the given order.
    pub fn from_sources(
        name: &str,
        entry: &str,
        files: &[(&str, &str)],
    ) -> Result<ProjectSnapshot, HarnessError> {
        let manifest = Manifest {
            name: name.to_string(),
            entry: entry.to_string(),
            files: files.iter().map(|(p, _)| p.to_string()).collect(),
            tests: None,
        };
        let files = files
            .iter()
            .enumerate()
            .map(|(i, (p, c))| SourceFile {
                path: p.to_string(),
                content: c.to_string(),
                file_id: i as u32,
            })
            .collect();
        ProjectSnapshot::new(PathBuf::new(), manifest, files)
    }

    fn new(
        root: PathBuf,
        manifest: Manifest,
        files: Vec<SourceFile>,
    ) -> Result<ProjectSnapshot, HarnessError> {
        for f in &files {
            if !valid_path(&f.path) {
                return Err(HarnessError::Manifest(format!(
                    "invalid source path `{}`",
                    f.path
                )));
            }
        }
        let snapshot = ProjectSnapshot {
            root,
            content_digest: content_digest(&files),
            manifest,
            files,
        };
        snapshot.modules()?;
        Ok(snapshot)
    }

    pub fn modules(&self) -> Result<Vec<Module>, ParseError> {
        self.files
            .iter()
            .map(|f| parse_file(&f.content, &f.path, f.file_id))
            .collect()
    }

    pub fn program(&self) -> Result<Program, LinkError> {
        link(self.modules()?, &self.manifest.entry)
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.path == path)
    }

    /// A copy with some file contents replaced; the digest is recomputed.
    pub fn with_contents(&self, replaced: &[(String, String)]) -> ProjectSnapshot {
        let mut files = self.files.clone();
        for (path, content) in replaced {
            if let Some(f) = files.iter_mut().find(|f| &f.path == path) {
                f.content = content.clone();
            }
        }
        ProjectSnapshot {
            root: self.root.clone(),
            manifest: self.manifest.clone(),
            content_digest: content_digest(&files),
            files,
        }
    }

    pub fn tests_dir(&self) -> Option<PathBuf> {
        self.manifest.tests.as_ref().map(|t| self.root.join(t))
    }

    /// Writes `forge.json` and the source files under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = Manifest {
            tests: None,
            ..self.manifest.clone()
        };
        let path = dir.join("forge.json");
        let text = crate::json::to_canonical(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
        for f in &self.files {
            let path = dir.join(&f.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, &f.content).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

pub fn load_project(dir: &Path) -> Result<ProjectSnapshot, HarnessError> {
    let manifest_path = dir.join("forge.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        HarnessError::Manifest(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.files.is_empty() {
        return Err(HarnessError::Manifest("`files` is empty".into()));
    }
    let mut seen = BTreeSet::new();
    let mut files = Vec::new();
    for (i, path) in manifest.files.iter().enumerate() {
        if !valid_path(path) {
            return Err(HarnessError::Manifest(format!(
                "invalid source path `{path}`"
            )));
        }
        if !seen.insert(path) {
            return Err(HarnessError::Manifest(format!("duplicate file `{path}`")));
        }
        let full = dir.join(path);
        if !full.is_file() {
            return Err(HarnessError::MissingFile(path.clone()));
        }
        let content = fs::read_to_string(&full).map_err(io_err(&full))?;
        files.push(SourceFile {
            path: path.clone(),
            content,
            file_id: i as u32,
        });
    }
    ProjectSnapshot::new(dir.to_path_buf(), manifest, files)
}

/// The project's bundled suite, or an empty one when it has no tests dir.
pub fn load_tests(snapshot: &ProjectSnapshot) -> Result<TestSuite, HarnessError> {
    match snapshot.tests_dir() {
        Some(dir) if dir.is_dir() => TestSuite::load(&dir),
        _ => Ok(TestSuite::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub passed: bool,
    pub status: Status,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub results: Vec<TestResult>,
}

impl TestReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed).count()
    }
}

pub fn run_tests(snapshot: &ProjectSnapshot, suite: &TestSuite) -> Result<TestReport, LinkError> {
    Ok(run_suite(&snapshot.program()?, suite))
}

pub fn run_suite(program: &Program, suite: &TestSuite) -> TestReport {
    let results = suite
        .cases
        .iter()
        .map(|case| {
            let r = run(program, &case.input, Limits::default());
            let reason = if let Some(v) = &r.violation {
                Some(format!(
                    "sanitizer violation {} at {}:{}",
                    v.kind.name(),
                    v.file,
                    v.line
                ))
            } else if r.status != case.expect_status.status() {
                Some(format!(
                    "status {:?}, expected {:?}",
                    r.status,
                    case.expect_status.status()
                ))
            } else if r.outputs != case.expect_out {
                Some(output_diff(&case.expect_out, &r.outputs))
            } else {
                None
            };
            TestResult {
                name: case.name.clone(),
                passed: reason.is_none(),
                status: r.status,
                outputs: r.outputs,
                reason,
            }
        })
        .collect();
    TestReport { results }
}

fn output_diff(expected: &[String], actual: &[String]) -> String {
    let n = expected.len().max(actual.len());
    for i in 0..n {
        let e = expected.get(i);
        let a = actual.get(i);
        if e != a {
            return format!(
                "output line {}: expected {}, got {}",
                i + 1,
                e.map_or("<none>".to_string(), |s| format!("{s:?}")),
                a.map_or("<none>".to_string(), |s| format!("{s:?}"))
            );
        }
    }
    "outputs differ".to_string()
}

/// Union of branch coverage over a suite, ignoring pass/fail.
pub fn suite_coverage(program: &Program, suite: &TestSuite) -> BTreeSet<BranchId> {
    let mut all = BTreeSet::new();
    for case in &suite.cases {
        all.extend(run(program, &case.input, Limits::default()).coverage);
    }
    all
}

const EXTREMES: [i64; 7] = [0, 1, -1, 1 << 62, -(1 << 62), i64::MIN, i64::MAX];
const MAX_SYNTH_LEN: usize = 16;
const PLATEAU: usize = 200;

pub fn synthesize_tests(
    snapshot: &ProjectSnapshot,
    budget: usize,
    seed: u64,
) -> Result<TestSuite, HarnessError> {
    let program = snapshot.program()?;
    let suite = synthesize_for(&program, &TestSuite::default(), budget, seed);
    if suite.cases.is_empty() {
        return Err(HarnessError::NoViableTests);
    }
    Ok(suite)
}

/// Adds OK-status regression tests to `existing` until new coverage stops
/// appearing or the budget of executions runs out.
fn synthesize_for(program: &Program, existing: &TestSuite, budget: usize, seed: u64) -> TestSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = suite_coverage(program, existing);
    let mut cases = Vec::new();
    let mut names: BTreeSet<String> = existing.cases.iter().map(|c| c.name.clone()).collect();
    let mut since_new = 0;
    for _ in 0..budget {
        if since_new >= PLATEAU {
            break;
        }
        let len = rng.gen_range(1..=MAX_SYNTH_LEN);
        let input: Vec<i64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.8) {
                    rng.gen_range(-2..=66)
                } else {
                    EXTREMES[rng.gen_range(0..EXTREMES.len())]
                }
            })
            .collect();
        let r = run(program, &input, Limits::default());
        since_new += 1;
        if r.status != Status::Ok || r.coverage.is_subset(&covered) {
            continue;
        }
        since_new = 0;
        covered.extend(r.coverage.iter().copied());
        let mut k = cases.len();
        let name = loop {
            let n = format!("synth_{k:03}");
            if !names.contains(&n) {
                break n;
            }
            k += 1;
        };
        names.insert(name.clone());
        cases.push(TestCase {
            name,
            input: input[..r.inputs_consumed].to_vec(),
            expect_out: r.outputs,
            expect_status: ExpectStatus::Ok,
        });
    }
    TestSuite { cases }
}

/// The project's tests, topped up by synthesis when they cover less than
/// [`COVERAGE_THRESHOLD`] of the static branch ids.
pub fn discover_or_synthesize(
    snapshot: &ProjectSnapshot,
    budget: usize,
    seed: u64,
) -> Result<TestSuite, HarnessError> {
    let program = snapshot.program()?;
    let mut suite = load_tests(snapshot)?;
    let total = program.branch_count().max(1);
    let covered = suite_coverage(&program, &suite).len();
    if (covered as f64) / (total as f64) < COVERAGE_THRESHOLD {
        let extra = synthesize_for(&program, &suite, budget, seed);
        suite.cases.extend(extra.cases);
    }
    if suite.cases.is_empty() {
        return Err(HarnessError::NoViableTests);
    }
    Ok(suite)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineTest {
    pub name: String,
    pub input: Vec<i64>,
    pub outputs: Vec<String>,
    pub status: Status,
    pub coverage: BTreeSet<BranchId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub tests: Vec<BaselineTest>,
    pub union_coverage: BTreeSet<BranchId>,
    pub sites: Vec<CandidateSite>,
    pub violation_free: bool,
}

pub fn capture_baseline(
    snapshot: &ProjectSnapshot,
    suite: &TestSuite,
) -> Result<Baseline, HarnessError> {
    let program = snapshot.program()?;
    let report = run_suite(&program, suite);
    if let Some(bad) = report.results.iter().find(|r| !r.passed) {
        return Err(HarnessError::Baseline(format!(
            "test `{}` fails: {}",
            bad.name,
            bad.reason.as_deref().unwrap_or("")
        )));
    }
    let mut tests = Vec::new();
    let mut union_coverage = BTreeSet::new();
    for case in &suite.cases {
        let r = run(&program, &case.input, Limits::default());
        union_coverage.extend(r.coverage.iter().copied());
        tests.push(BaselineTest {
            name: case.name.clone(),
            input: case.input.clone(),
            outputs: r.outputs,
            status: r.status,
            coverage: r.coverage,
        });
    }
    Ok(Baseline {
        tests,
        union_coverage,
        sites: mine_sites(&program, &QueryConfig::default()),
        violation_free: true,
    })
}

//! Vulnerability injection: planner, implementer, reviewer and verifier.

pub mod catalog;
mod patch;
mod rewrite;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{CandidateSite, SinkKind};
use crate::digest::derive_seed;
use crate::harness::{run_suite, Baseline, ProjectSnapshot, TestSuite};
use crate::lang::{run, CrashKind, ExprKind, Limits, NodeId, Program, Res};
use catalog::{accepted_crashes, candidate_guards, guard_role, swap_candidates, Bound, PatternId};

pub use patch::{split_lines, Edit, Patch, PatchError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPolicy {
    pub allowed_patterns: Vec<PatternId>,
    pub require_cross_file: bool,
    pub top_t: usize,
    pub max_changed_lines: usize,
    pub max_changed_files: usize,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        InjectionPolicy {
            allowed_patterns: PatternId::ALL.to_vec(),
            require_cross_file: false,
            top_t: 3,
            max_changed_lines: 8,
            max_changed_files: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "intent", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EditIntent {
    /// Swap `<`/`<=` or `>`/`>=` in a comparison.
    FlipStrictness { node: NodeId },
    /// Delete a guarding `if` statement, or just one of its disjuncts.
    RemoveGuard { node: NodeId, statement: NodeId },
    /// Replace a variable use with another variable.
    SwapVariable { node: NodeId, replacement: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedSink {
    pub file: String,
    pub line: u32,
    pub kind: SinkKind,
    pub node: NodeId,
    pub crash_kinds: Vec<CrashKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub site: CandidateSite,
    pub pattern: PatternId,
    pub cwe: String,
    pub target_edits: Vec<EditIntent>,
    /// Sink in the unpatched program.
    pub expected_sink: ExpectedSink,
    /// Integer constants read by the edited guards.
    pub guard_constants: Vec<i64>,
    pub seed: u64,
}

impl InjectionPlan {
    /// The expected sink in patched-file coordinates.
    pub fn patched_sink(&self, patch: &Patch) -> ExpectedSink {
        ExpectedSink {
            line: patch.map_line(&self.expected_sink.file, self.expected_sink.line),
            ..self.expected_sink.clone()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InjectError {
    #[error("no eligible site")]
    NoSite,
    #[error("transform failed: {0}")]
    Transform(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub rules: Vec<RuleResult>,
}

impl ReviewReport {
    pub fn passed(&self) -> bool {
        self.rules.iter().all(|r| r.passed)
    }

    pub fn failed_rules(&self) -> Vec<&str> {
        self.rules
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.rule.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub parsed: bool,
    pub tests_passed: bool,
    pub outputs_identical: bool,
    pub dormant: bool,
    pub reasons: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.parsed && self.tests_passed && self.outputs_identical && self.dormant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InjectionOutcome {
    Verified {
        plan: Box<InjectionPlan>,
        patch: Patch,
    },
    RejectedReview {
        plan: Box<InjectionPlan>,
        report: ReviewReport,
    },
    RejectedVerify {
        plan: Box<InjectionPlan>,
        report: VerifyReport,
    },
    NoSite,
    TransformFailed {
        reason: String,
    },
}

impl InjectionOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            InjectionOutcome::Verified { .. } => "VERIFIED",
            InjectionOutcome::RejectedReview { .. } => "REJECTED_REVIEW",
            InjectionOutcome::RejectedVerify { .. } => "REJECTED_VERIFY",
            InjectionOutcome::NoSite => "NO_SITE",
            InjectionOutcome::TransformFailed { .. } => "TRANSFORM_FAILED",
        }
    }
}

/// The four roles of the injection chain. Learned components can replace the
/// deterministic ones by implementing this trait.
pub trait InjectionAgents {
    fn plan(
        &self,
        snapshot: &ProjectSnapshot,
        baseline: &Baseline,
        policy: &InjectionPolicy,
        seed: u64,
    ) -> Result<InjectionPlan, InjectError>;

    fn implement(
        &self,
        snapshot: &ProjectSnapshot,
        plan: &InjectionPlan,
    ) -> Result<Patch, InjectError>;

    fn review(
        &self,
        snapshot: &ProjectSnapshot,
        patch: &Patch,
        policy: &InjectionPolicy,
    ) -> ReviewReport;

    fn verify(
        &self,
        snapshot: &ProjectSnapshot,
        patch: &Patch,
        baseline: &Baseline,
        suite: &TestSuite,
    ) -> VerifyReport;
}

/// Rule-based implementation of every role.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedAgents;

impl InjectionAgents for RuleBasedAgents {
    fn plan(
        &self,
        snapshot: &ProjectSnapshot,
        baseline: &Baseline,
        policy: &InjectionPolicy,
        seed: u64,
    ) -> Result<InjectionPlan, InjectError> {
        plan(snapshot, baseline, policy, seed)
    }

    fn implement(
        &self,
        snapshot: &ProjectSnapshot,
        plan: &InjectionPlan,
    ) -> Result<Patch, InjectError> {
        implement(snapshot, plan)
    }

    fn review(
        &self,
        snapshot: &ProjectSnapshot,
        patch: &Patch,
        policy: &InjectionPolicy,
    ) -> ReviewReport {
        review(snapshot, patch, policy)
    }

    fn verify(
        &self,
        snapshot: &ProjectSnapshot,
        patch: &Patch,
        baseline: &Baseline,
        suite: &TestSuite,
    ) -> VerifyReport {
        verify(snapshot, patch, baseline, suite)
    }
}

/// Patterns both compatible with `site` and allowed by `policy`, in catalog
/// order.
pub fn eligible_patterns(site: &CandidateSite, policy: &InjectionPolicy) -> Vec<PatternId> {
    PatternId::ALL
        .into_iter()
        .filter(|p| site.compatible_patterns.contains(p) && policy.allowed_patterns.contains(p))
        .collect()
}

/// Ranks eligible sites and picks one of the top `top_t` with `seed`.
pub fn select_site<'b>(
    baseline: &'b Baseline,
    policy: &InjectionPolicy,
    seed: u64,
) -> Option<&'b CandidateSite> {
    let mut eligible: Vec<&CandidateSite> = baseline
        .sites
        .iter()
        .filter(|s| !eligible_patterns(s, policy).is_empty())
        .filter(|s| !policy.require_cross_file || s.path.cross_file_depth >= 2)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    eligible.sort_by_key(|s| {
        (
            std::cmp::Reverse(s.path.cross_file_depth),
            std::cmp::Reverse(s.path.steps.len()),
            s.site_id,
        )
    });
    eligible.truncate(policy.top_t.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "site", 0));
    Some(eligible[rng.gen_range(0..eligible.len())])
}

pub fn plan(
    snapshot: &ProjectSnapshot,
    baseline: &Baseline,
    policy: &InjectionPolicy,
    seed: u64,
) -> Result<InjectionPlan, InjectError> {
    let site = select_site(baseline, policy, seed).ok_or(InjectError::NoSite)?;
    let mut patterns = eligible_patterns(site, policy);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pattern", 0));
    patterns.shuffle(&mut rng);
    let program = snapshot
        .program()
        .map_err(|e| InjectError::Transform(e.to_string()))?;
    plan_site(&program, site, patterns[0], seed)
}

/// Builds the plan for a chosen site and pattern.
pub fn plan_site(
    program: &Program,
    site: &CandidateSite,
    pattern: PatternId,
    seed: u64,
) -> Result<InjectionPlan, InjectError> {
    let path = &site.path;
    let guards = candidate_guards(program, path, pattern);
    if guards.is_empty() {
        return Err(InjectError::Transform(format!(
            "{pattern} does not apply to site {}",
            site.site_id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "edits", 0));
    let role = |g: &crate::analysis::GuardInfo| guard_role(program, g).map(|r| r.bound);
    let remove = |g: &crate::analysis::GuardInfo| EditIntent::RemoveGuard {
        node: g.node,
        statement: g.statement,
    };
    let (edited, target_edits): (Vec<NodeId>, Vec<EditIntent>) = match pattern {
        PatternId::P1OffByOne => {
            let g = guards[rng.gen_range(0..guards.len())];
            (
                vec![g.node],
                vec![EditIntent::FlipStrictness { node: g.node }],
            )
        }
        PatternId::P2GuardRemoval | PatternId::P3OverflowGuard | PatternId::P4DivGuard => {
            let mut directions: Vec<Bound> = Vec::new();
            for g in &guards {
                let b = role(g).expect("candidate guards have a role");
                if !directions.contains(&b) {
                    directions.push(b);
                }
            }
            // Prefer a direction whose every guard on the path can go.
            let complete: Vec<Bound> = directions
                .iter()
                .copied()
                .filter(|d| {
                    path.guards
                        .iter()
                        .filter(|g| role(g) == Some(*d))
                        .all(|g| guards.iter().any(|c| c.node == g.node))
                })
                .collect();
            let pool = if complete.is_empty() {
                &directions
            } else {
                &complete
            };
            let dir = pool[rng.gen_range(0..pool.len())];
            let chosen: Vec<_> = guards.iter().filter(|g| role(g) == Some(dir)).collect();
            (
                chosen.iter().map(|g| g.node).collect(),
                chosen.iter().map(|g| remove(g)).collect(),
            )
        }
        PatternId::P5BoundSwap => {
            let options: Vec<(NodeId, NodeId, String)> = guards
                .iter()
                .flat_map(|g| {
                    swap_candidates(program, g)
                        .into_iter()
                        .map(move |(var, name)| (g.node, var, name))
                })
                .collect();
            let (guard, var, name) = options[rng.gen_range(0..options.len())].clone();
            (
                vec![guard],
                vec![EditIntent::SwapVariable {
                    node: var,
                    replacement: name,
                }],
            )
        }
    };

    let sink_node = match pattern {
        PatternId::P3OverflowGuard => *path.arith_nodes.first().unwrap_or(&path.sink),
        _ => path.sink,
    };
    let span = program
        .span(sink_node)
        .ok_or_else(|| InjectError::Transform("sink has no span".into()))?;
    let kind = if pattern == PatternId::P3OverflowGuard {
        SinkKind::ArithOperand
    } else {
        path.sink_kind
    };
    let mut constants = BTreeSet::new();
    for node in &edited {
        if let Some(e) = program.find_expr(*node) {
            e.walk(&mut |x| match (&x.kind, program.res(x.id)) {
                (ExprKind::Int(v), _) => {
                    constants.insert(*v);
                }
                (ExprKind::Var(_), Res::Const(v)) => {
                    constants.insert(v);
                }
                _ => {}
            });
        }
    }
    Ok(InjectionPlan {
        site: site.clone(),
        pattern,
        cwe: pattern.cwe().to_string(),
        target_edits,
        expected_sink: ExpectedSink {
            file: program.file_path(sink_node.file_id()).to_string(),
            line: span.start_line,
            kind,
            node: sink_node,
            crash_kinds: accepted_crashes(pattern, path.sink_kind).to_vec(),
        },
        guard_constants: constants.into_iter().collect(),
        seed,
    })
}

pub fn implement(snapshot: &ProjectSnapshot, plan: &InjectionPlan) -> Result<Patch, InjectError> {
    rewrite::implement(snapshot, plan).map_err(InjectError::Transform)
}

const BANNED: [&str; 7] = ["vuln", "bug", "exploit", "hack", "backdoor", "evil", "todo"];
const KEYWORDS: [&str; 11] = [
    "fn", "let", "if", "else", "while", "return", "int", "buf", "const", "true", "false",
];

fn words(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .collect()
}

fn identifiers(text: &str) -> Vec<&str> {
    words(text)
        .into_iter()
        .filter(|w| !w.starts_with(|c: char| c.is_ascii_digit()) && !KEYWORDS.contains(w))
        .collect()
}

fn is_snake(id: &str) -> bool {
    id.chars()
        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_upper_snake(id: &str) -> bool {
    id.chars()
        .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

pub fn review(snapshot: &ProjectSnapshot, patch: &Patch, policy: &InjectionPolicy) -> ReviewReport {
    let mut rules = Vec::new();
    let mut rule = |name: &str, problems: Vec<String>| {
        rules.push(RuleResult {
            rule: name.to_string(),
            passed: problems.is_empty(),
            detail: problems.join("; "),
        });
    };

    let lines = patch.changed_lines();
    let files = patch.files().len();
    let mut r1 = Vec::new();
    if lines > policy.max_changed_lines {
        r1.push(format!(
            "{lines} changed lines > {}",
            policy.max_changed_lines
        ));
    }
    if files > policy.max_changed_files {
        r1.push(format!(
            "{files} changed files > {}",
            policy.max_changed_files
        ));
    }
    rule("R1", r1);

    let added: Vec<(&Edit, Vec<&str>)> = patch
        .edits
        .iter()
        .map(|e| {
            let before: BTreeSet<&str> = words(&e.original).into_iter().collect();
            let new = words(&e.replacement)
                .into_iter()
                .filter(|w| !before.contains(w))
                .collect();
            (e, new)
        })
        .collect();

    let mut r2 = Vec::new();
    for (_, new) in &added {
        for w in new {
            let lower = w.to_ascii_lowercase();
            if let Some(b) = BANNED.iter().find(|b| lower.contains(*b)) {
                r2.push(format!("token `{w}` contains `{b}`"));
            }
        }
    }
    rule("R2", r2);

    let mut r3 = Vec::new();
    for (e, new) in &added {
        let Some(file) = snapshot.file(&e.file) else {
            continue;
        };
        let ids: Vec<&str> = identifiers(&file.content)
            .into_iter()
            .filter(|w| !is_upper_snake(w))
            .collect();
        let snake = ids.iter().filter(|w| is_snake(w)).count();
        let snake_dominant = ids.is_empty() || snake * 2 >= ids.len();
        for w in new {
            if w.starts_with(|c: char| c.is_ascii_digit())
                || KEYWORDS.contains(w)
                || is_upper_snake(w)
            {
                continue;
            }
            let ok = if snake_dominant {
                is_snake(w)
            } else {
                !w.contains('_')
            };
            if !ok {
                r3.push(format!("identifier `{w}` breaks the file's naming style"));
            }
        }
    }
    rule("R3", r3);

    let mut r4 = Vec::new();
    for e in &patch.edits {
        if e.replacement.matches("//").count() > e.original.matches("//").count() {
            r4.push(format!("{}:{} adds a comment", e.file, e.start_line));
        }
    }
    rule("R4", r4);

    let mut r5 = Vec::new();
    let program = snapshot.program().ok();
    for e in &patch.edits {
        if e.replacement_lines() > e.original_lines() {
            r5.push(format!("{}:{} inserts lines", e.file, e.start_line));
        }
        let inside = program.as_ref().is_some_and(|p| {
            (0..p.functions.len() as u32).any(|f| {
                let func = p.function(f);
                p.function_file(f) == e.file
                    && func.body.span.start_line < e.start_line
                    && e.end_line() < func.body.span.end_line
            })
        });
        if !inside {
            r5.push(format!(
                "{}:{} is outside a function body",
                e.file, e.start_line
            ));
        }
    }
    rule("R5", r5);
    ReviewReport { rules }
}

/// Applies `patch` to a copy of the snapshot.
pub fn apply_to_snapshot(
    snapshot: &ProjectSnapshot,
    patch: &Patch,
) -> Result<ProjectSnapshot, PatchError> {
    let files: Vec<(String, String)> = snapshot
        .files
        .iter()
        .map(|f| (f.path.clone(), f.content.clone()))
        .collect();
    let changed = patch.apply(&files)?;
    Ok(snapshot.with_contents(&changed))
}

pub fn verify(
    snapshot: &ProjectSnapshot,
    patch: &Patch,
    baseline: &Baseline,
    suite: &TestSuite,
) -> VerifyReport {
    let fail = |reason: String| VerifyReport {
        parsed: false,
        tests_passed: false,
        outputs_identical: false,
        dormant: false,
        reasons: vec![reason],
    };
    let patched = match apply_to_snapshot(snapshot, patch) {
        Ok(s) => s,
        Err(e) => return fail(format!("patch does not apply: {e}")),
    };
    let program = match patched.program() {
        Ok(p) => p,
        Err(e) => return fail(format!("patched program does not build: {e}")),
    };
    let mut reasons = Vec::new();
    let report = run_suite(&program, suite);
    for r in report.results.iter().filter(|r| !r.passed) {
        reasons.push(format!(
            "test `{}` fails: {}",
            r.name,
            r.reason.as_deref().unwrap_or("")
        ));
    }
    let mut outputs_identical = true;
    let mut dormant = true;
    for (i, t) in baseline.tests.iter().enumerate() {
        let r = run(&program, &t.input, Limits::default());
        if let Some(v) = &r.violation {
            dormant = false;
            reasons.push(format!(
                "test `{}` triggers {} at {}:{}",
                t.name,
                v.kind.name(),
                v.file,
                v.line
            ));
        }
        let same = report.results.get(i).is_none_or(|x| x.name == t.name);
        if !same || r.outputs != t.outputs || r.status != t.status {
            outputs_identical = false;
            reasons.push(format!(
                "test `{}` behaves differently from the baseline",
                t.name
            ));
        }
    }
    VerifyReport {
        parsed: true,
        tests_passed: report.all_passed(),
        outputs_identical,
        dormant,
        reasons,
    }
}

/// Runs the whole chain once.
pub fn inject_once(
    snapshot: &ProjectSnapshot,
    baseline: &Baseline,
    suite: &TestSuite,
    policy: &InjectionPolicy,
    seed: u64,
) -> InjectionOutcome {
    inject_with(&RuleBasedAgents, snapshot, baseline, suite, policy, seed)
}

pub fn inject_with<A: InjectionAgents>(
    agents: &A,
    snapshot: &ProjectSnapshot,
    baseline: &Baseline,
    suite: &TestSuite,
    policy: &InjectionPolicy,
    seed: u64,
) -> InjectionOutcome {
    match agents.plan(snapshot, baseline, policy, seed) {
        Ok(plan) => complete(agents, snapshot, baseline, suite, policy, plan),
        Err(InjectError::NoSite) => InjectionOutcome::NoSite,
        Err(InjectError::Transform(reason)) => InjectionOutcome::TransformFailed { reason },
    }
}

/// Implements, reviews and verifies an existing plan.
pub fn complete<A: InjectionAgents>(
    agents: &A,
    snapshot: &ProjectSnapshot,
    baseline: &Baseline,
    suite: &TestSuite,
    policy: &InjectionPolicy,
    plan: InjectionPlan,
) -> InjectionOutcome {
    let patch = match agents.implement(snapshot, &plan) {
        Ok(p) => p,
        Err(e) => {
            return InjectionOutcome::TransformFailed {
                reason: e.to_string(),
            }
        }
    };
    let review = agents.review(snapshot, &patch, policy);
    if !review.passed() {
        return InjectionOutcome::RejectedReview {
            plan: Box::new(plan),
            report: review,
        };
    }
    let report = agents.verify(snapshot, &patch, baseline, suite);
    if !report.passed() {
        return InjectionOutcome::RejectedVerify {
            plan: Box::new(plan),
            report,
        };
    }
    InjectionOutcome::Verified {
        plan: Box::new(plan),
        patch,
    }
}

//! Proof-of-vulnerability search: coverage-guided fuzzing toward an expected
//! sink, delta-debugging minimization, and replay.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inject::{InjectionPlan, Patch};
use crate::lang::{
    run, BranchId, CrashKind, CrashSignature, ExecutionResult, Limits, Program, StackFrame,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub budget: usize,
    pub seed: u64,
    pub boundary_bias: f64,
    pub max_input_len: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            budget: 2000,
            seed: 0,
            boundary_bias: 0.4,
            max_input_len: 64,
        }
    }
}

/// Where a fuzzing run must crash to count as a PoV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzTarget {
    pub file: String,
    pub line: u32,
    pub crash_kinds: Vec<CrashKind>,
    /// Constants from the edited guards; seeds the boundary set.
    pub constants: Vec<i64>,
}

impl FuzzTarget {
    /// Target for a plan's expected sink on the patched program.
    pub fn from_plan(plan: &InjectionPlan, patch: &Patch) -> FuzzTarget {
        let sink = plan.patched_sink(patch);
        FuzzTarget {
            file: sink.file,
            line: sink.line,
            crash_kinds: sink.crash_kinds,
            constants: plan.guard_constants.clone(),
        }
    }

    pub fn matches(&self, v: &CrashSignature) -> bool {
        v.file == self.file && v.line == self.line && self.crash_kinds.contains(&v.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSite {
    pub file: String,
    pub line: u32,
    pub kind: CrashKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerTrace {
    pub call_path: Vec<StackFrame>,
    pub crash_site: CrashSite,
    pub files_on_path: Vec<String>,
    pub covered_branches: BTreeSet<BranchId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PovRecord {
    pub input: Vec<i64>,
    pub signature: CrashSignature,
    pub minimized_input: Vec<i64>,
    pub trace: TriggerTrace,
    pub executions_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no PoV found after {executions_used} executions")]
pub struct NotFound {
    pub executions_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("input does not reproduce the target signature")]
pub struct PreconditionError;

const SMALL: std::ops::RangeInclusive<i64> = -2..=66;

fn boundary_set(constants: &[i64]) -> Vec<i64> {
    let mut set = BTreeSet::from([0, 1, -1, 1 << 62, -(1 << 62), i64::MIN, i64::MAX]);
    for &c in constants {
        set.insert(c);
        if let Some(v) = c.checked_sub(1) {
            set.insert(v);
        }
        if let Some(v) = c.checked_add(1) {
            set.insert(v);
        }
    }
    set.into_iter().collect()
}

fn mutate(rng: &mut ChaCha8Rng, input: &[i64], boundary: &[i64], config: &FuzzConfig) -> Vec<i64> {
    let mut out = input.to_vec();
    let rounds = rng.gen_range(1..=3);
    for _ in 0..rounds {
        let value = if rng.gen_bool(config.boundary_bias) {
            boundary[rng.gen_range(0..boundary.len())]
        } else {
            rng.gen_range(SMALL)
        };
        let op = rng.gen_range(0..4);
        if out.is_empty() || (op == 1 && out.len() < config.max_input_len) {
            let at = rng.gen_range(0..=out.len());
            out.insert(at, value);
        } else if op == 2 && out.len() < config.max_input_len {
            out.push(value);
        } else if op == 3 {
            out.remove(rng.gen_range(0..out.len()));
        } else {
            let at = rng.gen_range(0..out.len());
            out[at] = value;
        }
    }
    out.truncate(config.max_input_len);
    out
}

/// Searches for an input crashing `program` at `target`. Success is
/// label-matched: crashes elsewhere do not count.
pub fn fuzz(
    program: &Program,
    target: &FuzzTarget,
    seed_inputs: &[Vec<i64>],
    config: &FuzzConfig,
) -> Result<PovRecord, NotFound> {
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let boundary = boundary_set(&target.constants);
    let mut corpus: Vec<Vec<i64>> = Vec::new();
    let mut covered: BTreeSet<BranchId> = BTreeSet::new();
    let mut executions = 0;

    let mut seeds: Vec<Vec<i64>> = seed_inputs.to_vec();
    if seeds.is_empty() {
        seeds.push(Vec::new());
    }
    let mut hit = None;
    for s in seeds {
        if executions >= config.budget {
            break;
        }
        executions += 1;
        let r = run(program, &s, limits);
        if r.violation.as_ref().is_some_and(|v| target.matches(v)) {
            hit = Some(s);
            break;
        }
        covered.extend(r.coverage.iter().copied());
        if !corpus.contains(&s) {
            corpus.push(s);
        }
    }
    while hit.is_none() && executions < config.budget {
        let parent = &corpus[rng.gen_range(0..corpus.len())];
        let child = mutate(&mut rng, parent, &boundary, config);
        executions += 1;
        let r = run(program, &child, limits);
        if r.violation.as_ref().is_some_and(|v| target.matches(v)) {
            hit = Some(child);
            break;
        }
        if !r.coverage.is_subset(&covered) {
            covered.extend(r.coverage.iter().copied());
            corpus.push(child);
        }
    }
    let input = hit.ok_or(NotFound {
        executions_used: executions,
    })?;
    let signature = run(program, &input, limits)
        .violation
        .expect("hit input crashes");
    let minimized_input = minimize(program, &input, &signature).expect("hit input reproduces");
    let trace = trigger_trace(program, &minimized_input).expect("minimized input crashes");
    Ok(PovRecord {
        input,
        signature,
        minimized_input,
        trace,
        executions_used: executions,
    })
}

fn reproduces(program: &Program, input: &[i64], target: &CrashSignature) -> bool {
    run(program, input, Limits::default()).violation.as_ref() == Some(target)
}

/// ddmin followed by a per-element shrink toward zero, repeated until
/// neither changes the input. The result is 1-minimal under removal.
pub fn minimize(
    program: &Program,
    input: &[i64],
    target: &CrashSignature,
) -> Result<Vec<i64>, PreconditionError> {
    let test = |x: &[i64]| reproduces(program, x, target);
    if !test(input) {
        return Err(PreconditionError);
    }
    let mut current = input.to_vec();
    loop {
        current = ddmin(&current, &test);
        let shrunk = shrink(&current, &test);
        if shrunk == current {
            return Ok(current);
        }
        current = shrunk;
    }
}

fn ddmin(input: &[i64], test: &dyn Fn(&[i64]) -> bool) -> Vec<i64> {
    let mut current = input.to_vec();
    let mut n = 2usize;
    while current.len() >= 2 {
        let len = current.len();
        let chunk = len.div_ceil(n);
        let bounds: Vec<(usize, usize)> = (0..len)
            .step_by(chunk)
            .map(|s| (s, (s + chunk).min(len)))
            .collect();
        let mut reduced = false;
        for &(s, e) in &bounds {
            if test(&current[s..e]) {
                current = current[s..e].to_vec();
                n = 2;
                reduced = true;
                break;
            }
        }
        if !reduced && bounds.len() > 2 {
            for &(s, e) in &bounds {
                let complement: Vec<i64> =
                    current[..s].iter().chain(&current[e..]).copied().collect();
                if test(&complement) {
                    current = complement;
                    n = (n - 1).max(2);
                    reduced = true;
                    break;
                }
            }
        }
        if !reduced {
            if n >= len {
                break;
            }
            n = (2 * n).min(len);
        }
    }
    // Single-element removals, including down to the empty input.
    let mut i = 0;
    while i < current.len() {
        let mut candidate = current.clone();
        candidate.remove(i);
        if test(&candidate) {
            current = candidate;
            i = 0;
        } else {
            i += 1;
        }
    }
    current
}

fn shrink(input: &[i64], test: &dyn Fn(&[i64]) -> bool) -> Vec<i64> {
    let mut current = input.to_vec();
    for i in 0..current.len() {
        let v = current[i];
        if v == 0 {
            continue;
        }
        let with = |x: i64| {
            let mut c = current.clone();
            c[i] = x;
            test(&c)
        };
        if with(0) {
            current[i] = 0;
            continue;
        }
        // Smallest magnitude (same sign) that still reproduces; `lo` fails,
        // `hi` reproduces.
        let sign: i128 = if v < 0 { -1 } else { 1 };
        let (mut lo, mut hi) = (0i128, (v as i128).abs());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if with((sign * mid) as i64) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        current[i] = (sign * hi) as i64;
    }
    current
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reproduction {
    #[serde(rename = "match")]
    pub matched: bool,
    pub actual: ExecutionResult,
}

pub fn reproduce(program: &Program, input: &[i64], expected: &CrashSignature) -> Reproduction {
    let actual = run(program, input, Limits::default());
    Reproduction {
        matched: actual.violation.as_ref() == Some(expected),
        actual,
    }
}

/// Trace of the crashing run on `input`, if it crashes.
pub fn trigger_trace(program: &Program, input: &[i64]) -> Option<TriggerTrace> {
    let r = run(program, input, Limits::default());
    let v = r.violation?;
    let mut files_on_path: Vec<String> = Vec::new();
    let mut add = |f: &str| {
        if !files_on_path.iter().any(|x| x == f) {
            files_on_path.push(f.to_string());
        }
    };
    for frame in &r.crash_stack {
        if let Some(i) = program.function_index(&frame.function) {
            add(program.function_file(i));
        }
    }
    add(&v.file);
    Some(TriggerTrace {
        call_path: r.crash_stack,
        crash_site: CrashSite {
            file: v.file,
            line: v.line,
            kind: v.kind,
        },
        files_on_path,
        covered_branches: r.coverage,
    })
}

use serde::{Deserialize, Serialize};

use super::flow::{sink_span, taint_analysis, TaintPath};
use super::{SinkKind, SourceKind};
use crate::inject::catalog::{compatible_patterns, PatternId};
use crate::lang::{BinOp, Program, Span};

pub const FEATURE_WIDTH: usize = 12;

/// `[bias, is_guarded, guard_is_strict, taint_len_norm, cross_file,
/// sink one-hot x4, source one-hot x3]`.
pub type FeatureVector = [f64; FEATURE_WIDTH];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub sink_kinds: Vec<SinkKind>,
    pub require_cross_file: bool,
    /// Drop paths no catalog pattern applies to. Detection turns this off so
    /// that sites whose guard was removed are still ranked.
    pub require_compatible: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            sink_kinds: SinkKind::ALL.to_vec(),
            require_cross_file: false,
            require_compatible: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSite {
    pub site_id: u32,
    pub path: TaintPath,
    pub sink_span: Span,
    pub sink_file: String,
    pub compatible_patterns: Vec<PatternId>,
    pub features: FeatureVector,
}

pub fn mine_sites(program: &Program, config: &QueryConfig) -> Vec<CandidateSite> {
    let mut out = Vec::new();
    for path in taint_analysis(program) {
        if !config.sink_kinds.contains(&path.sink_kind) {
            continue;
        }
        if config.require_cross_file && path.cross_file_depth < 2 {
            continue;
        }
        let compatible_patterns = compatible_patterns(program, &path);
        if config.require_compatible && compatible_patterns.is_empty() {
            continue;
        }
        let features = path_features(program, &path);
        out.push(CandidateSite {
            site_id: out.len() as u32,
            sink_span: sink_span(program, &path),
            sink_file: program.file_path(path.sink.file_id()).to_string(),
            path,
            compatible_patterns,
            features,
        });
    }
    out
}

pub fn site_features(program: &Program, site: &CandidateSite) -> FeatureVector {
    path_features(program, &site.path)
}

fn path_features(_program: &Program, path: &TaintPath) -> FeatureVector {
    let mut f = [0.0; FEATURE_WIDTH];
    f[0] = 1.0;
    f[1] = if path.guarded { 1.0 } else { 0.0 };
    let strict = path
        .guards
        .iter()
        .any(|g| matches!(g.op, BinOp::Lt | BinOp::Gt));
    f[2] = if strict { 1.0 } else { 0.0 };
    f[3] = (path.steps.len() as f64 / 16.0).min(1.0);
    f[4] = if path.cross_file_depth >= 2 { 1.0 } else { 0.0 };
    let sink = match path.sink_kind {
        SinkKind::Index => 0,
        SinkKind::AllocSize => 1,
        SinkKind::DivDenom => 2,
        SinkKind::ArithOperand => 3,
    };
    f[5 + sink] = 1.0;
    let source = match path.source_kind {
        SourceKind::ReadInt => 0,
        SourceKind::ReadBuf => 1,
        SourceKind::Arg => 2,
    };
    f[9 + source] = 1.0;
    f
}

/// One line per path:
/// `source_kind file:line -> sink_kind file:line guarded=<0|1> depth=<n>`.
pub fn golden_lines(program: &Program, paths: &[TaintPath]) -> String {
    let mut out = String::new();
    for p in paths {
        let src = program.span(p.source).unwrap_or_default();
        let snk = program.span(p.sink).unwrap_or_default();
        out.push_str(&format!(
            "{} {}:{} -> {} {}:{} guarded={} depth={}\n",
            p.source_kind,
            program.file_path(p.source.file_id()),
            src.start_line,
            p.sink_kind,
            program.file_path(p.sink.file_id()),
            snk.start_line,
            u8::from(p.guarded),
            p.cross_file_depth
        ));
    }
    out
}

//! Static analysis over linked MiniC programs: call graph, intraprocedural
//! control flow, interprocedural taint from input reads to security-relevant
//! sinks, and the site-mining query that proposes injection locations.

mod callgraph;
pub mod cfg;
mod flow;
mod sites;

use serde::{Deserialize, Serialize};
use std::fmt;

pub use callgraph::{build_call_graph, CallEdge, CallGraph, FunctionNode};
pub use flow::{taint_analysis, GuardInfo, PathStep, TaintPath};
pub use sites::{
    golden_lines, mine_sites, site_features, CandidateSite, FeatureVector, QueryConfig,
    FEATURE_WIDTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceKind {
    ReadInt,
    ReadBuf,
    Arg,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::ReadInt => "READ_INT",
            SourceKind::ReadBuf => "READ_BUF",
            SourceKind::Arg => "ARG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SinkKind {
    Index,
    AllocSize,
    DivDenom,
    ArithOperand,
}

impl SinkKind {
    pub const ALL: [SinkKind; 4] = [
        SinkKind::Index,
        SinkKind::AllocSize,
        SinkKind::DivDenom,
        SinkKind::ArithOperand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SinkKind::Index => "INDEX",
            SinkKind::AllocSize => "ALLOC_SIZE",
            SinkKind::DivDenom => "DIV_DENOM",
            SinkKind::ArithOperand => "ARITH_OPERAND",
        }
    }
}

impl fmt::Display for SinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

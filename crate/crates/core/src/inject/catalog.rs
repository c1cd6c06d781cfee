//! The closed catalog of injectable vulnerability patterns and the rules
//! deciding which patterns apply to a taint path.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{GuardInfo, SinkKind, TaintPath};
use crate::lang::{BinOp, Block, CrashKind, Expr, ExprKind, NodeId, Program, Res, StmtKind, Type};

pub const CATALOG_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternId {
    #[serde(rename = "P1_OFF_BY_ONE")]
    P1OffByOne,
    #[serde(rename = "P2_GUARD_REMOVAL")]
    P2GuardRemoval,
    #[serde(rename = "P3_OVERFLOW_GUARD")]
    P3OverflowGuard,
    #[serde(rename = "P4_DIV_GUARD")]
    P4DivGuard,
    #[serde(rename = "P5_BOUND_SWAP")]
    P5BoundSwap,
}

impl PatternId {
    pub const ALL: [PatternId; 5] = [
        PatternId::P1OffByOne,
        PatternId::P2GuardRemoval,
        PatternId::P3OverflowGuard,
        PatternId::P4DivGuard,
        PatternId::P5BoundSwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternId::P1OffByOne => "P1_OFF_BY_ONE",
            PatternId::P2GuardRemoval => "P2_GUARD_REMOVAL",
            PatternId::P3OverflowGuard => "P3_OVERFLOW_GUARD",
            PatternId::P4DivGuard => "P4_DIV_GUARD",
            PatternId::P5BoundSwap => "P5_BOUND_SWAP",
        }
    }

    pub fn from_name(name: &str) -> Option<PatternId> {
        PatternId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn spec(self) -> &'static PatternSpec {
        &CATALOG[self as usize]
    }

    pub fn cwe(self) -> &'static str {
        self.spec().cwe
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuardRequirement {
    RequiresGuarded,
    RequiresUnguarded,
    Any,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternSpec {
    pub pattern_id: PatternId,
    pub cwe: &'static str,
    pub sink_kinds: &'static [SinkKind],
    pub guard: GuardRequirement,
}

pub static CATALOG: [PatternSpec; 5] = [
    PatternSpec {
        pattern_id: PatternId::P1OffByOne,
        cwe: "CWE-193",
        sink_kinds: &[SinkKind::Index],
        guard: GuardRequirement::RequiresGuarded,
    },
    PatternSpec {
        pattern_id: PatternId::P2GuardRemoval,
        cwe: "CWE-20/787",
        sink_kinds: &[SinkKind::Index, SinkKind::AllocSize],
        guard: GuardRequirement::RequiresGuarded,
    },
    PatternSpec {
        pattern_id: PatternId::P3OverflowGuard,
        cwe: "CWE-190",
        sink_kinds: &[SinkKind::Index, SinkKind::AllocSize, SinkKind::ArithOperand],
        guard: GuardRequirement::RequiresGuarded,
    },
    PatternSpec {
        pattern_id: PatternId::P4DivGuard,
        cwe: "CWE-369",
        sink_kinds: &[SinkKind::DivDenom],
        guard: GuardRequirement::RequiresGuarded,
    },
    PatternSpec {
        pattern_id: PatternId::P5BoundSwap,
        cwe: "CWE-125",
        sink_kinds: &[SinkKind::Index],
        guard: GuardRequirement::RequiresGuarded,
    },
];

/// The coarse compatibility table: pattern x sink kind x guardedness.
pub fn table_allows(pattern: PatternId, sink: SinkKind, guarded: bool) -> bool {
    let spec = pattern.spec();
    let guard_ok = match spec.guard {
        GuardRequirement::RequiresGuarded => guarded,
        GuardRequirement::RequiresUnguarded => !guarded,
        GuardRequirement::Any => true,
    };
    guard_ok && spec.sink_kinds.contains(&sink)
}

/// Crash kinds that count as triggering `pattern` at a sink of kind `sink`.
pub fn accepted_crashes(pattern: PatternId, sink: SinkKind) -> &'static [CrashKind] {
    match (pattern, sink) {
        (PatternId::P3OverflowGuard, _) => &[CrashKind::Overflow],
        (PatternId::P4DivGuard, _) => &[CrashKind::DivZero],
        (PatternId::P2GuardRemoval, SinkKind::AllocSize) => &[CrashKind::AllocNeg],
        _ => &[CrashKind::OobRead, CrashKind::OobWrite],
    }
}

/// Crash kinds consistent with a CWE label.
pub fn cwe_crashes(cwe: &str) -> &'static [CrashKind] {
    match cwe {
        "CWE-193" | "CWE-125" => &[CrashKind::OobRead, CrashKind::OobWrite],
        "CWE-20/787" => &[CrashKind::OobRead, CrashKind::OobWrite, CrashKind::AllocNeg],
        "CWE-190" => &[CrashKind::Overflow],
        "CWE-369" => &[CrashKind::DivZero],
        _ => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Upper,
    Lower,
    /// The comparison excludes zero (`x != 0` on the passing side).
    NonZero,
}

/// What a guard enforces on the tainted operand along the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardRole {
    pub bound: Bound,
    /// The passing side is a strict comparison.
    pub strict: bool,
    pub pass: bool,
}

fn negated(op: BinOp) -> BinOp {
    match op {
        BinOp::Lt => BinOp::Ge,
        BinOp::Le => BinOp::Gt,
        BinOp::Gt => BinOp::Le,
        BinOp::Ge => BinOp::Lt,
        BinOp::Eq => BinOp::Ne,
        BinOp::Ne => BinOp::Eq,
        other => other,
    }
}

pub fn guard_role(program: &Program, guard: &GuardInfo) -> Option<GuardRole> {
    if guard.tainted_lhs == guard.tainted_rhs {
        return None;
    }
    let pass = guard.pass?;
    let ExprKind::Binary { lhs, rhs, .. } = &program.find_expr(guard.node)?.kind else {
        return None;
    };
    let (op, other) = if guard.tainted_lhs {
        (guard.op, rhs)
    } else {
        (guard.op.mirrored(), lhs)
    };
    let allowed = if pass { op } else { negated(op) };
    let bound = match allowed {
        BinOp::Lt | BinOp::Le => Bound::Upper,
        BinOp::Gt | BinOp::Ge => Bound::Lower,
        BinOp::Ne if matches!(other.kind, ExprKind::Int(0)) => Bound::NonZero,
        _ => return None,
    };
    Some(GuardRole {
        bound,
        strict: matches!(allowed, BinOp::Lt | BinOp::Gt),
        pass,
    })
}

/// Top-level `||` operands of a condition.
pub fn disjuncts(cond: &Expr) -> Vec<&Expr> {
    match &cond.kind {
        ExprKind::Binary {
            op: BinOp::Or,
            lhs,
            rhs,
        } => {
            let mut out = disjuncts(lhs);
            out.extend(disjuncts(rhs));
            out
        }
        _ => vec![cond],
    }
}

/// A guard that can be deleted: it rejects on `true` and is the whole
/// condition, or one disjunct, of an `if` without `else`.
pub fn removable(program: &Program, guard: &GuardInfo) -> bool {
    if guard.pass != Some(false) {
        return false;
    }
    let Some(stmt) = program.find_stmt(guard.statement) else {
        return false;
    };
    match &stmt.kind {
        StmtKind::If {
            cond,
            else_block: None,
            ..
        } => disjuncts(cond).iter().any(|d| d.id == guard.node),
        _ => false,
    }
}

fn single_line(program: &Program, id: NodeId) -> bool {
    program.span(id).is_some_and(|s| s.start_line == s.end_line)
}

/// Guards a pattern may edit, in path order.
pub fn candidate_guards<'a>(
    program: &Program,
    path: &'a TaintPath,
    pattern: PatternId,
) -> Vec<&'a GuardInfo> {
    if !table_allows(pattern, path.sink_kind, path.guarded) {
        return Vec::new();
    }
    let role = |g: &GuardInfo| guard_role(program, g);
    path.guards
        .iter()
        .filter(|g| {
            let Some(r) = role(g) else {
                return false;
            };
            match pattern {
                PatternId::P1OffByOne => {
                    r.bound == Bound::Upper && r.strict && single_line(program, g.node)
                }
                PatternId::P2GuardRemoval => {
                    let dir_ok = match path.sink_kind {
                        SinkKind::Index => matches!(r.bound, Bound::Upper | Bound::Lower),
                        _ => r.bound == Bound::Lower,
                    };
                    dir_ok && removable(program, g)
                }
                PatternId::P3OverflowGuard => {
                    let feeds_arith =
                        path.sink_kind == SinkKind::ArithOperand || !path.arith_nodes.is_empty();
                    feeds_arith && r.bound == Bound::Upper && removable(program, g)
                }
                PatternId::P4DivGuard => r.bound == Bound::NonZero && removable(program, g),
                PatternId::P5BoundSwap => {
                    r.bound == Bound::Upper
                        && single_line(program, g.node)
                        && !swap_candidates(program, g).is_empty()
                }
            }
        })
        .collect()
}

pub fn compatible_patterns(program: &Program, path: &TaintPath) -> Vec<PatternId> {
    PatternId::ALL
        .into_iter()
        .filter(|&p| !candidate_guards(program, path, p).is_empty())
        .collect()
}

/// The variable in a guard's bound operand that P5 replaces, and the
/// in-scope integer variables it may be replaced with.
pub fn swap_candidates(program: &Program, guard: &GuardInfo) -> Vec<(NodeId, String)> {
    let Some(ExprKind::Binary { lhs, rhs, .. }) = program.find_expr(guard.node).map(|e| &e.kind)
    else {
        return Vec::new();
    };
    let (tainted, bound) = if guard.tainted_lhs {
        (lhs, rhs)
    } else {
        (rhs, lhs)
    };
    let Some(f) = program.owner(guard.node) else {
        return Vec::new();
    };
    let scope = scope_at(program, f, guard.statement);
    let mut used: Vec<&str> = tainted.variables();
    used.extend(bound.variables());
    let mut out = Vec::new();
    bound.walk(&mut |x| {
        if let ExprKind::Var(name) = &x.kind {
            if matches!(program.res(x.id), Res::Local(_) | Res::Const(_))
                && program.expr_type(x.id) == Some(Type::Int)
            {
                for (cand, ty) in &scope {
                    if *ty == Type::Int && cand != name && !used.contains(&cand.as_str()) {
                        out.push((x.id, cand.clone()));
                    }
                }
            }
        }
    });
    out
}

/// Variables visible just before statement `target` in function `func`.
pub fn scope_at(program: &Program, func: u32, target: NodeId) -> Vec<(String, Type)> {
    fn walk(
        program: &Program,
        block: &Block,
        target: NodeId,
        visible: &mut Vec<(String, Type)>,
    ) -> bool {
        for s in &block.stmts {
            if s.id == target {
                return true;
            }
            let nested: Vec<&Block> = match &s.kind {
                StmtKind::If {
                    then_block,
                    else_block,
                    ..
                } => std::iter::once(then_block)
                    .chain(else_block.iter())
                    .collect(),
                StmtKind::While { body, .. } => vec![body],
                _ => Vec::new(),
            };
            for b in nested {
                let mut inner = visible.clone();
                if walk(program, b, target, &mut inner) {
                    *visible = inner;
                    return true;
                }
            }
            if let StmtKind::Let { name, init } = &s.kind {
                if let Some(ty) = program.expr_type(init.id) {
                    visible.push((name.clone(), ty));
                }
            }
        }
        false
    }
    let function = program.function(func);
    let mut visible: Vec<(String, Type)> = function
        .params
        .iter()
        .map(|p| (p.name.clone(), p.ty))
        .collect();
    walk(program, &function.body, target, &mut visible);
    visible
}

/// Rows of the committed compatibility table, in catalog order.
pub fn compatibility_table() -> Vec<(PatternId, SinkKind, bool, bool)> {
    let mut rows = Vec::new();
    for p in PatternId::ALL {
        for s in SinkKind::ALL {
            for g in [false, true] {
                rows.push((p, s, g, table_allows(p, s, g)));
            }
        }
    }
    rows
}

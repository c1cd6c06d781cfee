//! Value-flow graph and taint paths.
//!
//! Integer values are tracked flow-sensitively through reaching definitions
//! inside each function and context-insensitively across calls. Buffers are
//! grouped into alias classes (assignment, parameter binding and return all
//! merge classes); writing a tainted value into any member taints the class.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::callgraph::build_call_graph;
use super::cfg::{Cfg, CfgNode, Dominators};
use super::{SinkKind, SourceKind};
use crate::lang::{
    BinOp, Builtin, Expr, ExprKind, NodeId, Program, Res, Span, Stmt, StmtKind, Type,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum VNode {
    Source(NodeId),
    Param(NodeId),
    Def(NodeId),
    Arith(NodeId),
    CallRet(NodeId),
    Return(NodeId),
    BufWrite(NodeId),
    BufRead(NodeId),
    BufClass(u32),
}

impl VNode {
    fn anchor(self) -> Option<NodeId> {
        match self {
            VNode::Source(n)
            | VNode::Param(n)
            | VNode::Def(n)
            | VNode::Arith(n)
            | VNode::CallRet(n)
            | VNode::Return(n)
            | VNode::BufWrite(n)
            | VNode::BufRead(n) => Some(n),
            VNode::BufClass(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub function: String,
    pub node: NodeId,
}

/// A comparison in an `if`/`while` condition that dominates a point on the
/// path and reads the tainted value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GuardInfo {
    pub node: NodeId,
    /// The enclosing `if` or `while` statement.
    pub statement: NodeId,
    pub function: String,
    pub op: BinOp,
    pub tainted_lhs: bool,
    pub tainted_rhs: bool,
    /// Outcome of the comparison that lets execution continue along the
    /// path, when exactly one outcome does.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaintPath {
    pub source: NodeId,
    pub source_kind: SourceKind,
    pub sink: NodeId,
    pub sink_kind: SinkKind,
    pub steps: Vec<PathStep>,
    pub guarded: bool,
    pub guard_sites: Vec<NodeId>,
    pub guards: Vec<GuardInfo>,
    /// `+`/`*` nodes the tainted value passes through.
    pub arith_nodes: Vec<NodeId>,
    pub cross_file_depth: u32,
}

pub fn taint_analysis(program: &Program) -> Vec<TaintPath> {
    let model = Model::build(program);
    let mut paths = model.paths();
    let key = |p: &TaintPath| {
        let span = program.span(p.sink).unwrap_or_default();
        (
            program.file_path(p.sink.file_id()).to_string(),
            span.start_line,
            span.start_col,
            p.source_kind,
            p.source,
            p.sink_kind,
        )
    };
    paths.sort_by_cached_key(key);
    paths
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum BufKey {
    Slot(u32, u32),
    FnRet(u32),
    Alloc(NodeId),
}

#[derive(Default)]
struct UnionFind {
    index: HashMap<BufKey, usize>,
    parent: Vec<usize>,
}

impl UnionFind {
    fn id(&mut self, key: BufKey) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.index.insert(key, i);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: BufKey, b: BufKey) {
        let (a, b) = (self.id(a), self.id(b));
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so class ids do not depend on union order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn class(&mut self, key: BufKey) -> u32 {
        let i = self.id(key);
        self.find(i) as u32
    }
}

struct FuncFlow {
    cfg: Cfg,
    dom: Dominators,
    rd_in: Vec<BTreeSet<(u32, NodeId)>>,
    params: Vec<NodeId>,
}

struct Model<'p> {
    program: &'p Program,
    funcs: Vec<FuncFlow>,
    graph: BTreeMap<VNode, BTreeSet<(VNode, Option<NodeId>)>>,
    sinks: BTreeMap<(NodeId, SinkKind), BTreeSet<VNode>>,
    sources: Vec<(VNode, SourceKind, NodeId)>,
    uf: UnionFind,
    returns: Vec<Vec<NodeId>>,
    /// Condition atom id to (atom, enclosing if/while statement).
    atoms: HashMap<NodeId, (&'p Expr, NodeId)>,
}

impl<'p> Model<'p> {
    fn build(program: &'p Program) -> Self {
        let n = program.functions.len();
        let funcs: Vec<FuncFlow> = (0..n as u32)
            .map(|f| {
                let cfg = Cfg::build(program, f);
                let dom = Dominators::new(&cfg);
                let rd_in = cfg.reaching_definitions();
                let params = program.function(f).params.iter().map(|p| p.id).collect();
                FuncFlow {
                    cfg,
                    dom,
                    rd_in,
                    params,
                }
            })
            .collect();
        let mut returns = vec![Vec::new(); n];
        let mut atoms = HashMap::new();
        for (f, rets) in returns.iter_mut().enumerate() {
            program
                .function(f as u32)
                .body
                .walk_stmts(&mut |s| match &s.kind {
                    StmtKind::Return(Some(_)) => rets.push(s.id),
                    StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => {
                        collect_atoms(cond, s.id, &mut atoms);
                    }
                    _ => {}
                });
        }
        let mut model = Model {
            program,
            funcs,
            graph: BTreeMap::new(),
            sinks: BTreeMap::new(),
            sources: Vec::new(),
            uf: UnionFind::default(),
            returns,
            atoms,
        };
        for f in 0..n as u32 {
            let body = &program.function(f).body;
            body.walk_stmts(&mut |s| model.unions(f, s));
        }
        for f in 0..n as u32 {
            let body = &program.function(f).body;
            for s in &body.stmts {
                model.stmt(f, s);
            }
        }
        let graph = build_call_graph(program);
        for f in 0..n as u32 {
            if f == program.entry || graph.callers_of(f).next().is_some() {
                continue;
            }
            for (slot, p) in program.function(f).params.iter().enumerate() {
                let v = VNode::Param(p.id);
                model.sources.push((v, SourceKind::Arg, p.id));
                if p.ty == Type::Buf {
                    let class = model.uf.class(BufKey::Slot(f, slot as u32));
                    model.edge(v, VNode::BufClass(class), None);
                }
            }
        }
        model.sources.sort();
        model.sources.dedup();
        model
    }

    fn edge(&mut self, from: VNode, to: VNode, via: Option<NodeId>) {
        self.graph.entry(from).or_default().insert((to, via));
    }

    fn slot(&self, id: NodeId) -> u32 {
        match self.program.res(id) {
            Res::Local(s) => s,
            other => unreachable!("expected local, got {other:?}"),
        }
    }

    fn buf_key(&self, f: u32, e: &Expr) -> Option<BufKey> {
        match &e.kind {
            ExprKind::Var(_) => match self.program.res(e.id) {
                Res::Local(slot) => Some(BufKey::Slot(f, slot)),
                _ => None,
            },
            ExprKind::Call { .. } => match self.program.res(e.id) {
                Res::Func(callee) => Some(BufKey::FnRet(callee)),
                Res::Builtin(Builtin::Alloc | Builtin::ReadBuf) => Some(BufKey::Alloc(e.id)),
                _ => None,
            },
            _ => None,
        }
    }

    fn is_buf(&self, e: &Expr) -> bool {
        self.program.expr_type(e.id) == Some(Type::Buf)
    }

    /// First pass: merge buffer alias classes.
    fn unions(&mut self, f: u32, s: &Stmt) {
        match &s.kind {
            StmtKind::Let { init: e, .. } | StmtKind::Assign { value: e, .. } if self.is_buf(e) => {
                let slot = self.slot(s.id);
                if let Some(k) = self.buf_key(f, e) {
                    self.uf.union(BufKey::Slot(f, slot), k);
                }
            }
            StmtKind::Return(Some(e)) if self.is_buf(e) => {
                if let Some(k) = self.buf_key(f, e) {
                    self.uf.union(BufKey::FnRet(f), k);
                }
            }
            _ => {}
        }
        for e in s.own_exprs() {
            e.walk(&mut |x| {
                if let (ExprKind::Call { args, .. }, Res::Func(callee)) =
                    (&x.kind, self.program.res(x.id))
                {
                    for (i, a) in args.iter().enumerate() {
                        if self.is_buf(a) {
                            if let Some(k) = self.buf_key(f, a) {
                                self.uf.union(BufKey::Slot(callee, i as u32), k);
                            }
                        }
                    }
                }
            });
        }
    }

    fn reaching(&self, f: u32, at: NodeId, slot: u32) -> BTreeSet<VNode> {
        let flow = &self.funcs[f as usize];
        let Some(loc) = flow.cfg.location(at) else {
            return BTreeSet::new();
        };
        flow.rd_in[loc]
            .iter()
            .filter(|(s, _)| *s == slot)
            .map(|&(_, def)| {
                if flow.params.contains(&def) {
                    VNode::Param(def)
                } else {
                    VNode::Def(def)
                }
            })
            .collect()
    }

    fn stmt(&mut self, f: u32, s: &'p Stmt) {
        match &s.kind {
            StmtKind::Let { init: e, .. } | StmtKind::Assign { value: e, .. } => {
                let v = self.value(f, e);
                if !self.is_buf(e) {
                    for u in v {
                        self.edge(u, VNode::Def(s.id), None);
                    }
                }
            }
            StmtKind::IndexAssign { index, value, .. } => {
                let vi = self.value(f, index);
                self.sinks
                    .entry((s.id, SinkKind::Index))
                    .or_default()
                    .extend(vi);
                let vv = self.value(f, value);
                for u in vv {
                    self.edge(u, VNode::BufWrite(s.id), None);
                }
                let class = self.uf.class(BufKey::Slot(f, self.slot(s.id)));
                self.edge(VNode::BufWrite(s.id), VNode::BufClass(class), None);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                self.value(f, cond);
                for t in &then_block.stmts {
                    self.stmt(f, t);
                }
                if let Some(b) = else_block {
                    for t in &b.stmts {
                        self.stmt(f, t);
                    }
                }
            }
            StmtKind::While { cond, body } => {
                self.value(f, cond);
                for t in &body.stmts {
                    self.stmt(f, t);
                }
            }
            StmtKind::Return(Some(e)) => {
                let v = self.value(f, e);
                if !self.is_buf(e) {
                    for u in v {
                        self.edge(u, VNode::Return(s.id), None);
                    }
                }
            }
            StmtKind::Return(None) => {}
            StmtKind::Expr(e) => {
                self.value(f, e);
            }
        }
    }

    /// Value-flow nodes an expression's value derives from. Records edges and
    /// sinks for every sub-expression.
    fn value(&mut self, f: u32, e: &'p Expr) -> BTreeSet<VNode> {
        match &e.kind {
            ExprKind::Int(_) => BTreeSet::new(),
            ExprKind::Var(_) => match self.program.res(e.id) {
                Res::Local(slot) if !self.is_buf(e) => self.reaching(f, e.id, slot),
                _ => BTreeSet::new(),
            },
            ExprKind::Index { index, .. } => {
                let vi = self.value(f, index);
                self.sinks
                    .entry((e.id, SinkKind::Index))
                    .or_default()
                    .extend(vi);
                let class = self.uf.class(BufKey::Slot(f, self.slot(e.id)));
                self.edge(VNode::BufClass(class), VNode::BufRead(e.id), None);
                BTreeSet::from([VNode::BufRead(e.id)])
            }
            ExprKind::Call { args, .. } => match self.program.res(e.id) {
                Res::Builtin(b) => match b {
                    Builtin::ReadInt => {
                        self.sources
                            .push((VNode::Source(e.id), SourceKind::ReadInt, e.id));
                        BTreeSet::from([VNode::Source(e.id)])
                    }
                    Builtin::ReadBuf | Builtin::Alloc => {
                        let v = self.value(f, &args[0]);
                        self.sinks
                            .entry((e.id, SinkKind::AllocSize))
                            .or_default()
                            .extend(v);
                        if b == Builtin::ReadBuf {
                            self.sources
                                .push((VNode::Source(e.id), SourceKind::ReadBuf, e.id));
                            let class = self.uf.class(BufKey::Alloc(e.id));
                            self.edge(VNode::Source(e.id), VNode::BufClass(class), None);
                        }
                        BTreeSet::new()
                    }
                    Builtin::Len => {
                        self.value(f, &args[0]);
                        if let Some(k) = self.buf_key(f, &args[0]) {
                            let class = self.uf.class(k);
                            self.edge(VNode::BufClass(class), VNode::BufRead(e.id), None);
                        }
                        BTreeSet::from([VNode::BufRead(e.id)])
                    }
                    Builtin::Print | Builtin::Abort => {
                        self.value(f, &args[0]);
                        BTreeSet::new()
                    }
                },
                Res::Func(callee) => {
                    let params: Vec<(NodeId, Type)> = self
                        .program
                        .function(callee)
                        .params
                        .iter()
                        .map(|p| (p.id, p.ty))
                        .collect();
                    for (a, (pid, ty)) in args.iter().zip(params) {
                        let v = self.value(f, a);
                        if ty == Type::Int {
                            for u in v {
                                self.edge(u, VNode::Param(pid), Some(e.id));
                            }
                        }
                    }
                    if self.program.function(callee).ret == Some(Type::Int) {
                        for r in self.returns[callee as usize].clone() {
                            self.edge(VNode::Return(r), VNode::CallRet(e.id), None);
                        }
                        BTreeSet::from([VNode::CallRet(e.id)])
                    } else {
                        BTreeSet::new()
                    }
                }
                other => unreachable!("call resolves to {other:?}"),
            },
            ExprKind::Binary { op, lhs, rhs } => {
                let vl = self.value(f, lhs);
                let vr = self.value(f, rhs);
                if matches!(op, BinOp::Div | BinOp::Rem) {
                    self.sinks
                        .entry((e.id, SinkKind::DivDenom))
                        .or_default()
                        .extend(vr.iter().copied());
                }
                let mut all = vl;
                all.extend(vr);
                if matches!(op, BinOp::Add | BinOp::Mul) {
                    for u in all {
                        self.edge(u, VNode::Arith(e.id), None);
                    }
                    BTreeSet::from([VNode::Arith(e.id)])
                } else {
                    all
                }
            }
            ExprKind::Unary { operand, .. } => self.value(f, operand),
        }
    }

    /// Every value-flow node referenced anywhere inside `e` (no edges added).
    fn deps(&self, f: u32, e: &Expr) -> BTreeSet<VNode> {
        let mut out = BTreeSet::new();
        e.walk(&mut |x| match &x.kind {
            ExprKind::Var(_) => {
                if let Res::Local(slot) = self.program.res(x.id) {
                    if !self.is_buf(x) {
                        out.extend(self.reaching(f, x.id, slot));
                    }
                }
            }
            ExprKind::Index { .. } => {
                out.insert(VNode::BufRead(x.id));
            }
            ExprKind::Call { .. } => match self.program.res(x.id) {
                Res::Builtin(Builtin::ReadInt) => {
                    out.insert(VNode::Source(x.id));
                }
                Res::Builtin(Builtin::Len) => {
                    out.insert(VNode::BufRead(x.id));
                }
                Res::Func(_) => {
                    out.insert(VNode::CallRet(x.id));
                }
                _ => {}
            },
            ExprKind::Binary {
                op: BinOp::Add | BinOp::Mul,
                ..
            } => {
                out.insert(VNode::Arith(x.id));
            }
            _ => {}
        });
        out
    }

    fn bfs(&self, start: VNode) -> HashMap<VNode, (VNode, Option<NodeId>, usize)> {
        let mut parent = HashMap::new();
        parent.insert(start, (start, None, 0usize));
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = parent[&u].2;
            if let Some(next) = self.graph.get(&u) {
                for &(v, via) in next {
                    if let std::collections::hash_map::Entry::Vacant(slot) = parent.entry(v) {
                        slot.insert((u, via, d + 1));
                        queue.push_back(v);
                    }
                }
            }
        }
        parent
    }

    /// Nodes from which some INDEX or ALLOC_SIZE operand is reachable.
    fn feeds_memory_sink(&self) -> BTreeSet<VNode> {
        let mut reverse: BTreeMap<VNode, Vec<VNode>> = BTreeMap::new();
        for (&u, next) in &self.graph {
            for &(v, _) in next {
                reverse.entry(v).or_default().push(u);
            }
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        for ((_, kind), ops) in &self.sinks {
            if matches!(kind, SinkKind::Index | SinkKind::AllocSize) {
                for &v in ops {
                    if seen.insert(v) {
                        queue.push_back(v);
                    }
                }
            }
        }
        while let Some(v) = queue.pop_front() {
            if let Some(prev) = reverse.get(&v) {
                for &u in prev {
                    if seen.insert(u) {
                        queue.push_back(u);
                    }
                }
            }
        }
        seen
    }

    fn paths(&self) -> Vec<TaintPath> {
        let feeds = self.feeds_memory_sink();
        let mut out = Vec::new();
        for &(start, source_kind, source) in &self.sources {
            let parent = self.bfs(start);
            for (&(sink, sink_kind), operands) in &self.sinks {
                let best = operands
                    .iter()
                    .filter_map(|v| parent.get(v).map(|p| (p.2, *v)))
                    .min();
                if let Some((_, target)) = best {
                    out.push(self.make_path(
                        &parent,
                        start,
                        target,
                        source,
                        source_kind,
                        sink,
                        sink_kind,
                    ));
                }
            }
            let mut ariths: Vec<(usize, VNode)> = parent
                .iter()
                .filter(|(v, _)| matches!(v, VNode::Arith(_)) && feeds.contains(v))
                .map(|(v, p)| (p.2, *v))
                .collect();
            ariths.sort();
            for (_, a) in ariths {
                let node = a.anchor().expect("arith is anchored");
                out.push(self.make_path(
                    &parent,
                    start,
                    a,
                    source,
                    source_kind,
                    node,
                    SinkKind::ArithOperand,
                ));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn make_path(
        &self,
        parent: &HashMap<VNode, (VNode, Option<NodeId>, usize)>,
        start: VNode,
        target: VNode,
        source: NodeId,
        source_kind: SourceKind,
        sink: NodeId,
        sink_kind: SinkKind,
    ) -> TaintPath {
        let mut chain = vec![target];
        let mut vias = Vec::new();
        let mut cur = target;
        while cur != start {
            let (prev, via, _) = parent[&cur];
            if let Some(c) = via {
                vias.push(c);
            }
            chain.push(prev);
            cur = prev;
        }
        chain.reverse();
        vias.reverse();

        let name = |n: NodeId| {
            let f = self.program.owner(n).expect("anchored node has an owner");
            self.program.functions[f as usize].name.clone()
        };
        let mut steps: Vec<PathStep> = chain
            .iter()
            .filter_map(|v| v.anchor())
            .map(|n| PathStep {
                function: name(n),
                node: n,
            })
            .collect();
        if steps.last().map(|s| s.node) != Some(sink) {
            steps.push(PathStep {
                function: name(sink),
                node: sink,
            });
        }
        let arith_nodes = chain
            .iter()
            .filter_map(|v| match v {
                VNode::Arith(n) => Some(*n),
                _ => None,
            })
            .collect();

        let on_path: BTreeSet<VNode> = chain.iter().copied().collect();
        let mut points: Vec<NodeId> = steps.iter().map(|s| s.node).collect();
        points.extend(vias);
        let guards = self.guards(&points, &on_path);
        let files: BTreeSet<u32> = steps
            .iter()
            .map(|s| {
                let f = self.program.owner(s.node).expect("owner");
                self.program.functions[f as usize].file_id
            })
            .collect();
        TaintPath {
            source,
            source_kind,
            sink,
            sink_kind,
            steps,
            guarded: !guards.is_empty(),
            guard_sites: guards.iter().map(|g| g.node).collect(),
            guards,
            arith_nodes,
            cross_file_depth: files.len() as u32,
        }
    }

    fn guards(&self, points: &[NodeId], on_path: &BTreeSet<VNode>) -> Vec<GuardInfo> {
        let mut found: BTreeMap<NodeId, GuardInfo> = BTreeMap::new();
        for &point in points {
            let Some(f) = self.program.owner(point) else {
                continue;
            };
            let flow = &self.funcs[f as usize];
            let Some(at) = flow.cfg.location(point) else {
                continue;
            };
            for (c, kind) in flow.cfg.nodes.iter().enumerate() {
                let CfgNode::Cond(atom) = *kind else {
                    continue;
                };
                if found.contains_key(&atom) || !flow.dom.strictly_dominates(c, at) {
                    continue;
                }
                let Some(&(expr, statement)) = self.atoms.get(&atom) else {
                    continue;
                };
                let ExprKind::Binary { op, lhs, rhs } = &expr.kind else {
                    continue;
                };
                if !op.is_comparison() {
                    continue;
                }
                let tainted_lhs = self.deps(f, lhs).iter().any(|v| on_path.contains(v));
                let tainted_rhs = self.deps(f, rhs).iter().any(|v| on_path.contains(v));
                if tainted_lhs || tainted_rhs {
                    found.insert(
                        atom,
                        GuardInfo {
                            node: atom,
                            statement,
                            function: self.program.functions[f as usize].name.clone(),
                            op: *op,
                            tainted_lhs,
                            tainted_rhs,
                            pass: pass_outcome(&flow.cfg, c, at),
                        },
                    );
                }
            }
        }
        found.into_values().collect()
    }
}

fn pass_outcome(cfg: &Cfg, cond: usize, target: usize) -> Option<bool> {
    let succ = &cfg.succ[cond];
    if succ.len() != 2 {
        return None;
    }
    let reaches = |start: usize| {
        let mut seen = vec![false; cfg.len()];
        seen[cond] = true;
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(cfg.succ[n].iter().copied());
        }
        false
    };
    match (reaches(succ[0]), reaches(succ[1])) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

fn collect_atoms<'p>(e: &'p Expr, stmt: NodeId, out: &mut HashMap<NodeId, (&'p Expr, NodeId)>) {
    match &e.kind {
        ExprKind::Binary {
            op: BinOp::And | BinOp::Or,
            lhs,
            rhs,
        } => {
            collect_atoms(lhs, stmt, out);
            collect_atoms(rhs, stmt, out);
        }
        ExprKind::Unary {
            op: crate::lang::UnOp::Not,
            operand,
        } => collect_atoms(operand, stmt, out),
        _ => {
            out.insert(e.id, (e, stmt));
        }
    }
}

/// Location helper shared with site mining.
pub(crate) fn sink_span(program: &Program, path: &TaintPath) -> Span {
    program.span(path.sink).unwrap_or_default()
}

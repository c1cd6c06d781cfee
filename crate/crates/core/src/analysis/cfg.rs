//! Per-function control-flow graphs.
//!
//! Conditions are split into short-circuit atoms so each comparison in an
//! `if`/`while` condition has its own node; `return` and `abort(...)`
//! statements flow to the exit node.

use std::collections::{BTreeSet, HashMap};

use crate::lang::{
    BinOp, Block, Builtin, Expr, ExprKind, NodeId, Program, Res, Stmt, StmtKind, UnOp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfgNode {
    Entry,
    Exit,
    /// A simple statement (`let`, assignment, expression, `return`).
    Stmt(NodeId),
    /// A condition atom: an `if`/`while` condition after `&&`, `||` and `!`
    /// are decomposed.
    Cond(NodeId),
    /// Loop header placeholder.
    Join,
}

pub const ENTRY: usize = 0;
pub const EXIT: usize = 1;

#[derive(Debug, Clone)]
pub struct Cfg {
    pub nodes: Vec<CfgNode>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    /// AST node (statement or expression) to the CFG node evaluating it.
    location: HashMap<NodeId, usize>,
    /// Variable definition made by each node: `(slot, defining node)`.
    defs: Vec<Vec<(u32, NodeId)>>,
}

impl Cfg {
    pub fn build(program: &Program, func: u32) -> Cfg {
        let f = program.function(func);
        let mut b = Builder {
            program,
            cfg: Cfg {
                nodes: vec![CfgNode::Entry, CfgNode::Exit],
                succ: vec![Vec::new(), Vec::new()],
                pred: vec![Vec::new(), Vec::new()],
                location: HashMap::new(),
                defs: vec![Vec::new(), Vec::new()],
            },
        };
        for (slot, p) in f.params.iter().enumerate() {
            b.cfg.defs[ENTRY].push((slot as u32, p.id));
            b.cfg.location.insert(p.id, ENTRY);
        }
        let first = b.block(&f.body, EXIT);
        b.edge(ENTRY, first);
        let mut cfg = b.cfg;
        for (from, succs) in cfg.succ.iter().enumerate() {
            for &to in succs {
                cfg.pred[to].push(from);
            }
        }
        cfg
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn location(&self, ast: NodeId) -> Option<usize> {
        self.location.get(&ast).copied()
    }

    pub fn defs(&self, node: usize) -> &[(u32, NodeId)] {
        &self.defs[node]
    }

    /// Nodes reachable from the entry in reverse post-order.
    pub fn reverse_postorder(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut order = Vec::new();
        // Iterative DFS with an explicit child cursor.
        let mut stack = vec![(ENTRY, 0usize)];
        seen[ENTRY] = true;
        while let Some((node, cursor)) = stack.pop() {
            if cursor < self.succ[node].len() {
                stack.push((node, cursor + 1));
                let next = self.succ[node][cursor];
                if !seen[next] {
                    seen[next] = true;
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }
        order.reverse();
        order
    }

    /// Immediate dominators (Cooper, Harvey and Kennedy). Unreachable nodes
    /// map to `None`; the entry maps to itself.
    pub fn immediate_dominators(&self) -> Vec<Option<usize>> {
        let rpo = self.reverse_postorder();
        let mut rank = vec![usize::MAX; self.len()];
        for (i, &n) in rpo.iter().enumerate() {
            rank[n] = i;
        }
        let mut idom: Vec<Option<usize>> = vec![None; self.len()];
        idom[ENTRY] = Some(ENTRY);
        let mut changed = true;
        while changed {
            changed = false;
            for &n in rpo.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for &p in &self.pred[n] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, &rank, p, cur),
                    });
                }
                if new_idom.is_some() && idom[n] != new_idom {
                    idom[n] = new_idom;
                    changed = true;
                }
            }
        }
        idom
    }

    /// Reaching definitions at the entry of each node.
    pub fn reaching_definitions(&self) -> Vec<BTreeSet<(u32, NodeId)>> {
        let n = self.len();
        let mut rd_in: Vec<BTreeSet<(u32, NodeId)>> = vec![BTreeSet::new(); n];
        let mut rd_out: Vec<BTreeSet<(u32, NodeId)>> = vec![BTreeSet::new(); n];
        let rpo = self.reverse_postorder();
        let mut changed = true;
        while changed {
            changed = false;
            for &node in &rpo {
                let mut input = BTreeSet::new();
                for &p in &self.pred[node] {
                    input.extend(rd_out[p].iter().copied());
                }
                let mut output = input.clone();
                for &(slot, def) in &self.defs[node] {
                    output.retain(|&(s, _)| s != slot);
                    output.insert((slot, def));
                }
                if output != rd_out[node] {
                    rd_out[node] = output;
                    changed = true;
                }
                rd_in[node] = input;
            }
        }
        rd_in
    }
}

fn intersect(idom: &[Option<usize>], rank: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while rank[a] > rank[b] {
            a = idom[a].expect("processed node has idom");
        }
        while rank[b] > rank[a] {
            b = idom[b].expect("processed node has idom");
        }
    }
    a
}

/// Dominator queries over one CFG.
#[derive(Debug, Clone)]
pub struct Dominators {
    idom: Vec<Option<usize>>,
}

impl Dominators {
    pub fn new(cfg: &Cfg) -> Self {
        Dominators {
            idom: cfg.immediate_dominators(),
        }
    }

    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if self.idom[b].is_none() {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            let up = self.idom[cur].expect("reachable");
            if up == cur {
                return false;
            }
            cur = up;
        }
    }

    pub fn strictly_dominates(&self, a: usize, b: usize) -> bool {
        a != b && self.dominates(a, b)
    }
}

struct Builder<'p> {
    program: &'p Program,
    cfg: Cfg,
}

impl Builder<'_> {
    fn node(&mut self, kind: CfgNode) -> usize {
        self.cfg.nodes.push(kind);
        self.cfg.succ.push(Vec::new());
        self.cfg.pred.push(Vec::new());
        self.cfg.defs.push(Vec::new());
        self.cfg.nodes.len() - 1
    }

    fn edge(&mut self, from: usize, to: usize) {
        if !self.cfg.succ[from].contains(&to) {
            self.cfg.succ[from].push(to);
        }
    }

    fn locate_expr(&mut self, expr: &Expr, node: usize) {
        let location = &mut self.cfg.location;
        expr.walk(&mut |e| {
            location.insert(e.id, node);
        });
    }

    fn block(&mut self, block: &Block, succ: usize) -> usize {
        let mut next = succ;
        for stmt in block.stmts.iter().rev() {
            next = self.stmt(stmt, next);
        }
        next
    }

    fn is_abort(&self, expr: &Expr) -> bool {
        matches!(expr.kind, ExprKind::Call { .. })
            && self.program.res(expr.id) == Res::Builtin(Builtin::Abort)
    }

    fn stmt(&mut self, stmt: &Stmt, succ: usize) -> usize {
        match &stmt.kind {
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let t = self.block(then_block, succ);
                let f = match else_block {
                    Some(b) => self.block(b, succ),
                    None => succ,
                };
                let c = self.cond(cond, t, f);
                self.cfg.location.insert(stmt.id, c);
                c
            }
            StmtKind::While { cond, body } => {
                let head = self.node(CfgNode::Join);
                let body_entry = self.block(body, head);
                let c = self.cond(cond, body_entry, succ);
                self.edge(head, c);
                self.cfg.location.insert(stmt.id, head);
                head
            }
            _ => {
                let n = self.node(CfgNode::Stmt(stmt.id));
                self.cfg.location.insert(stmt.id, n);
                for e in stmt.own_exprs() {
                    self.locate_expr(e, n);
                }
                let terminal = match &stmt.kind {
                    StmtKind::Return(_) => true,
                    StmtKind::Expr(e) => self.is_abort(e),
                    _ => false,
                };
                self.edge(n, if terminal { EXIT } else { succ });
                if matches!(stmt.kind, StmtKind::Let { .. } | StmtKind::Assign { .. }) {
                    if let Res::Local(slot) = self.program.res(stmt.id) {
                        self.cfg.defs[n].push((slot, stmt.id));
                    }
                }
                n
            }
        }
    }

    fn cond(&mut self, expr: &Expr, t: usize, f: usize) -> usize {
        let entry = match &expr.kind {
            ExprKind::Binary {
                op: BinOp::And,
                lhs,
                rhs,
            } => {
                let r = self.cond(rhs, t, f);
                self.cond(lhs, r, f)
            }
            ExprKind::Binary {
                op: BinOp::Or,
                lhs,
                rhs,
            } => {
                let r = self.cond(rhs, t, f);
                self.cond(lhs, t, r)
            }
            ExprKind::Unary {
                op: UnOp::Not,
                operand,
            } => self.cond(operand, f, t),
            _ => {
                let n = self.node(CfgNode::Cond(expr.id));
                self.locate_expr(expr, n);
                self.edge(n, t);
                self.edge(n, f);
                return n;
            }
        };
        self.cfg.location.insert(expr.id, entry);
        entry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{link, parse_file};

    fn program(src: &str) -> Program {
        link(vec![parse_file(src, "main.mc", 0).unwrap()], "main").unwrap()
    }

    fn cond_nodes(cfg: &Cfg) -> Vec<usize> {
        (0..cfg.len())
            .filter(|&i| matches!(cfg.nodes[i], CfgNode::Cond(_)))
            .collect()
    }

    #[test]
    fn disjunctive_guard_dominates_following_statement() {
        let p = program(
            "fn main() {\n  let n = read_int();\n  if (n < 0 || n > 64) {\n    abort(1);\n  }\n  let b = alloc(n);\n}\n",
        );
        let cfg = Cfg::build(&p, 0);
        let dom = Dominators::new(&cfg);
        let main = p.function(0);
        let alloc_stmt = cfg.location(main.body.stmts[2].id).unwrap();
        let conds = cond_nodes(&cfg);
        assert_eq!(conds.len(), 2);
        for c in conds {
            assert!(dom.strictly_dominates(c, alloc_stmt));
        }
    }

    #[test]
    fn conjunctive_second_atom_does_not_dominate() {
        let p = program(
            "fn main() {\n  let n = read_int();\n  if (n > 0 && n < 9) {\n    abort(1);\n  }\n  print(n);\n}\n",
        );
        let cfg = Cfg::build(&p, 0);
        let dom = Dominators::new(&cfg);
        let print_stmt = cfg.location(p.function(0).body.stmts[2].id).unwrap();
        let conds = cond_nodes(&cfg);
        let dominating: Vec<_> = conds
            .iter()
            .filter(|&&c| dom.strictly_dominates(c, print_stmt))
            .collect();
        assert_eq!(dominating.len(), 1);
    }

    #[test]
    fn reaching_definitions_through_loop() {
        let p = program(
            "fn main() {\n  let i = 0;\n  while (i < 3) {\n    i = i + 1;\n  }\n  print(i);\n}\n",
        );
        let cfg = Cfg::build(&p, 0);
        let rd = cfg.reaching_definitions();
        let print_node = cfg.location(p.function(0).body.stmts[2].id).unwrap();
        assert_eq!(rd[print_node].len(), 2);
    }
}

use serde::{Deserialize, Serialize};

use crate::lang::{ExprKind, NodeId, Program, Res};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionNode {
    pub file: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: u32,
    pub callee: u32,
    pub call_site: NodeId,
}

/// Exact call graph; nodes are indexed like `Program::functions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub nodes: Vec<FunctionNode>,
    pub edges: Vec<CallEdge>,
}

impl CallGraph {
    pub fn callers_of(&self, callee: u32) -> impl Iterator<Item = &CallEdge> {
        self.edges.iter().filter(move |e| e.callee == callee)
    }

    /// One line per edge: `caller_file:caller -> callee_file:callee @line`.
    pub fn render(&self, program: &Program) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let a = &self.nodes[e.caller as usize];
            let b = &self.nodes[e.callee as usize];
            out.push_str(&format!(
                "{}:{} -> {}:{} @{}\n",
                a.file,
                a.name,
                b.file,
                b.name,
                crate::lang::node_line(program, e.call_site)
            ));
        }
        out
    }
}

pub fn build_call_graph(program: &Program) -> CallGraph {
    let nodes = program
        .functions
        .iter()
        .enumerate()
        .map(|(i, info)| FunctionNode {
            file: program.function_file(i as u32).to_string(),
            name: info.name.clone(),
        })
        .collect();
    let mut edges = Vec::new();
    for caller in 0..program.functions.len() as u32 {
        program.function(caller).body.walk_stmts(&mut |stmt| {
            for e in stmt.own_exprs() {
                e.walk(&mut |x| {
                    if let ExprKind::Call { .. } = x.kind {
                        if let Res::Func(callee) = program.res(x.id) {
                            edges.push(CallEdge {
                                caller,
                                callee,
                                call_site: x.id,
                            });
                        }
                    }
                });
            }
        });
    }
    edges.sort_by_key(|e| (e.caller, e.call_site));
    CallGraph { nodes, edges }
}

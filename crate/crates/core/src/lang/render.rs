//! Canonical pretty-printer: two-space indentation, one statement per line,
//! minimal parentheses, comments dropped.

use super::ast::*;

pub fn render(module: &Module) -> String {
    let mut out = String::new();
    for (i, item) in module.items.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match item {
            Item::Const(c) => {
                out.push_str(&format!("const {} = {};\n", c.name, c.value));
            }
            Item::Func(f) => render_function(f, &mut out),
        }
    }
    out
}

fn render_function(f: &Function, out: &mut String) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("{}: {}", p.name, p.ty))
        .collect();
    out.push_str(&format!("fn {}({})", f.name, params.join(", ")));
    if let Some(ret) = f.ret {
        out.push_str(&format!(" -> {ret}"));
    }
    out.push_str(" {\n");
    render_stmts(&f.body, 1, out);
    out.push_str("}\n");
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn render_stmts(block: &Block, level: usize, out: &mut String) {
    for stmt in &block.stmts {
        indent(level, out);
        render_stmt(stmt, level, out);
    }
}

/// Renders a statement starting at the current position (indentation already
/// written) and ending with a newline.
pub fn render_stmt(stmt: &Stmt, level: usize, out: &mut String) {
    match &stmt.kind {
        StmtKind::Let { name, init } => {
            out.push_str(&format!("let {name} = {};\n", render_expr(init)));
        }
        StmtKind::Assign { name, value } => {
            out.push_str(&format!("{name} = {};\n", render_expr(value)));
        }
        StmtKind::IndexAssign { base, index, value } => {
            out.push_str(&format!(
                "{base}[{}] = {};\n",
                render_expr(index),
                render_expr(value)
            ));
        }
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            out.push_str(&format!("if ({}) {{\n", render_expr(cond)));
            render_stmts(then_block, level + 1, out);
            indent(level, out);
            match else_block {
                None => out.push_str("}\n"),
                Some(b) if b.stmts.len() == 1 && matches!(b.stmts[0].kind, StmtKind::If { .. }) => {
                    out.push_str("} else ");
                    render_stmt(&b.stmts[0], level, out);
                }
                Some(b) => {
                    out.push_str("} else {\n");
                    render_stmts(b, level + 1, out);
                    indent(level, out);
                    out.push_str("}\n");
                }
            }
        }
        StmtKind::While { cond, body } => {
            out.push_str(&format!("while ({}) {{\n", render_expr(cond)));
            render_stmts(body, level + 1, out);
            indent(level, out);
            out.push_str("}\n");
        }
        StmtKind::Return(None) => out.push_str("return;\n"),
        StmtKind::Return(Some(e)) => out.push_str(&format!("return {};\n", render_expr(e))),
        StmtKind::Expr(e) => out.push_str(&format!("{};\n", render_expr(e))),
    }
}

pub fn render_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(expr, 0, &mut out);
    out
}

const UNARY_PREC: u8 = 7;

fn write_expr(expr: &Expr, ctx_prec: u8, out: &mut String) {
    match &expr.kind {
        ExprKind::Int(v) => out.push_str(&v.to_string()),
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Index { base, index } => {
            out.push_str(base);
            out.push('[');
            write_expr(index, 0, out);
            out.push(']');
        }
        ExprKind::Call { callee, args } => {
            out.push_str(callee);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(a, 0, out);
            }
            out.push(')');
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let prec = op.precedence();
            let paren = prec < ctx_prec;
            if paren {
                out.push('(');
            }
            write_expr(lhs, prec, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            // Left-associative: an equal-precedence right operand needs parens.
            write_expr(rhs, prec + 1, out);
            if paren {
                out.push(')');
            }
        }
        ExprKind::Unary { op, operand } => {
            let paren = UNARY_PREC < ctx_prec;
            if paren {
                out.push('(');
            }
            out.push_str(op.symbol());
            write_expr(operand, UNARY_PREC, out);
            if paren {
                out.push(')');
            }
        }
    }
}

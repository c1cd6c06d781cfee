//! Linking: cross-file name resolution, arity and type checking.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::error::{LinkError, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    ReadInt,
    ReadBuf,
    Len,
    Print,
    Abort,
    Alloc,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Builtin> {
        Some(match name {
            "read_int" => Builtin::ReadInt,
            "read_buf" => Builtin::ReadBuf,
            "len" => Builtin::Len,
            "print" => Builtin::Print,
            "abort" => Builtin::Abort,
            "alloc" => Builtin::Alloc,
            _ => return None,
        })
    }

    fn signature(self) -> (&'static [Type], Option<Type>) {
        match self {
            Builtin::ReadInt => (&[], Some(Type::Int)),
            Builtin::ReadBuf => (&[Type::Int], Some(Type::Buf)),
            Builtin::Len => (&[Type::Buf], Some(Type::Int)),
            Builtin::Print => (&[Type::Int], None),
            Builtin::Abort => (&[Type::Int], None),
            Builtin::Alloc => (&[Type::Int], Some(Type::Buf)),
        }
    }
}

/// What a node refers to after linking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Res {
    None,
    /// A parameter or `let` binding, by frame slot.
    Local(u32),
    Const(i64),
    Func(u32),
    Builtin(Builtin),
}

#[derive(Debug, Clone)]
pub struct FuncInfo {
    pub name: String,
    pub file_id: u32,
    pub item_index: usize,
    /// Declaration node (parameter or `let` statement) of each slot.
    pub slot_decls: Vec<NodeId>,
    pub slot_types: Vec<Type>,
    pub slot_names: Vec<String>,
}

/// A linked, type-checked program.
#[derive(Debug, Clone)]
pub struct Program {
    pub modules: Vec<Module>,
    pub functions: Vec<FuncInfo>,
    pub entry: u32,
    by_name: BTreeMap<String, u32>,
    res: Vec<Vec<Res>>,
    types: Vec<Vec<Option<Type>>>,
    owner: Vec<Vec<u32>>,
    spans: Vec<Vec<Span>>,
}

impl Program {
    pub fn span(&self, id: NodeId) -> Option<Span> {
        self.spans
            .get(id.file_id() as usize)
            .and_then(|v| v.get(id.ordinal() as usize))
            .copied()
            .filter(|s| s.start_line > 0)
    }

    pub fn function(&self, idx: u32) -> &Function {
        let info = &self.functions[idx as usize];
        match &self.modules[info.file_id as usize].items[info.item_index] {
            Item::Func(f) => f,
            Item::Const(_) => unreachable!("function index points at a const"),
        }
    }

    pub fn function_index(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    pub fn res(&self, id: NodeId) -> Res {
        self.res
            .get(id.file_id() as usize)
            .and_then(|v| v.get(id.ordinal() as usize))
            .copied()
            .unwrap_or(Res::None)
    }

    /// Static type of an expression node (`None` for unit calls).
    pub fn expr_type(&self, id: NodeId) -> Option<Type> {
        self.types
            .get(id.file_id() as usize)
            .and_then(|v| v.get(id.ordinal() as usize))
            .copied()
            .flatten()
    }

    /// Index of the function containing a node, if any.
    pub fn owner(&self, id: NodeId) -> Option<u32> {
        self.owner
            .get(id.file_id() as usize)
            .and_then(|v| v.get(id.ordinal() as usize))
            .copied()
            .filter(|&f| f != u32::MAX)
    }

    pub fn file_path(&self, file_id: u32) -> &str {
        &self.modules[file_id as usize].path
    }

    pub fn function_file(&self, idx: u32) -> &str {
        self.file_path(self.functions[idx as usize].file_id)
    }

    /// Total number of branch ids: one entry id per function and two per
    /// `if`/`while`.
    pub fn branch_count(&self) -> usize {
        let mut n = 0;
        for (i, _) in self.functions.iter().enumerate() {
            n += 1;
            self.function(i as u32).body.walk_stmts(&mut |s| {
                if matches!(s.kind, StmtKind::If { .. } | StmtKind::While { .. }) {
                    n += 2;
                }
            });
        }
        n
    }

    pub fn find_expr(&self, id: NodeId) -> Option<&Expr> {
        let f = self.owner(id)?;
        let mut found = None;
        self.function(f).body.walk_stmts(&mut |s| {
            for e in s.own_exprs() {
                e.walk(&mut |x| {
                    if x.id == id {
                        found = Some(x);
                    }
                });
            }
        });
        found
    }

    pub fn find_stmt(&self, id: NodeId) -> Option<&Stmt> {
        let f = self.owner(id)?;
        let mut found = None;
        self.function(f).body.walk_stmts(&mut |s| {
            if s.id == id {
                found = Some(s);
            }
        });
        found
    }
}

/// Links parsed modules into a program with the given entry function.
/// Modules must be ordered by `file_id` starting at 0.
pub fn link(modules: Vec<Module>, entry: &str) -> Result<Program, LinkError> {
    for (i, m) in modules.iter().enumerate() {
        assert_eq!(m.file_id as usize, i, "modules must be ordered by file_id");
    }
    let mut functions = Vec::new();
    let mut by_name = BTreeMap::new();
    let mut consts: HashMap<String, i64> = HashMap::new();
    let mut seen: HashMap<String, String> = HashMap::new();

    for m in &modules {
        for (item_index, item) in m.items.iter().enumerate() {
            let (name, span) = match item {
                Item::Const(c) => (&c.name, c.span),
                Item::Func(f) => (&f.name, f.span),
            };
            let dup = |what: &str| ParseError {
                file: m.path.clone(),
                line: span.start_line,
                column: span.start_col,
                message: format!("{what} `{name}`"),
            };
            if Builtin::from_name(name).is_some() {
                return Err(dup("definition shadows builtin").into());
            }
            if seen.insert(name.clone(), m.path.clone()).is_some() {
                return Err(dup("duplicate definition of").into());
            }
            match item {
                Item::Const(c) => {
                    consts.insert(c.name.clone(), c.value);
                }
                Item::Func(f) => {
                    by_name.insert(f.name.clone(), functions.len() as u32);
                    functions.push(FuncInfo {
                        name: f.name.clone(),
                        file_id: m.file_id,
                        item_index,
                        slot_decls: Vec::new(),
                        slot_types: Vec::new(),
                        slot_names: Vec::new(),
                    });
                }
            }
        }
    }

    let entry_idx = *by_name
        .get(entry)
        .ok_or_else(|| LinkError::MissingEntry(entry.to_string()))?;

    let mut res: Vec<Vec<Res>> = modules
        .iter()
        .map(|m| vec![Res::None; m.node_count as usize])
        .collect();
    let mut types: Vec<Vec<Option<Type>>> = modules
        .iter()
        .map(|m| vec![None; m.node_count as usize])
        .collect();
    let mut owner: Vec<Vec<u32>> = modules
        .iter()
        .map(|m| vec![u32::MAX; m.node_count as usize])
        .collect();
    let mut spans: Vec<Vec<Span>> = modules
        .iter()
        .map(|m| vec![Span::default(); m.node_count as usize])
        .collect();
    for m in &modules {
        for c in m.consts() {
            spans[m.file_id as usize][c.id.ordinal() as usize] = c.span;
        }
    }

    // Signatures for call checking.
    let signatures: Vec<(Vec<Type>, Option<Type>)> = functions
        .iter()
        .map(|info| {
            let f = match &modules[info.file_id as usize].items[info.item_index] {
                Item::Func(f) => f,
                Item::Const(_) => unreachable!(),
            };
            (f.params.iter().map(|p| p.ty).collect(), f.ret)
        })
        .collect();

    for (fidx, info) in functions.iter_mut().enumerate() {
        let module = &modules[info.file_id as usize];
        let f = match &module.items[info.item_index] {
            Item::Func(f) => f,
            Item::Const(_) => unreachable!(),
        };
        let mut checker = Checker {
            path: &module.path,
            func_idx: fidx as u32,
            ret: f.ret,
            consts: &consts,
            by_name: &by_name,
            signatures: &signatures,
            scopes: vec![Vec::new()],
            info,
            res: &mut res[module.file_id as usize],
            types: &mut types[module.file_id as usize],
            owner: &mut owner[module.file_id as usize],
            spans: &mut spans[module.file_id as usize],
        };
        checker.mark(f.id, f.span);
        for p in &f.params {
            checker.mark(p.id, p.span);
            let slot = checker.declare(&p.name, p.ty, p.id, p.span)?;
            checker.res[p.id.ordinal() as usize] = Res::Local(slot);
        }
        checker.block(&f.body)?;
    }

    Ok(Program {
        modules,
        functions,
        entry: entry_idx,
        by_name,
        res,
        types,
        owner,
        spans,
    })
}

struct Checker<'a> {
    path: &'a str,
    func_idx: u32,
    ret: Option<Type>,
    consts: &'a HashMap<String, i64>,
    by_name: &'a BTreeMap<String, u32>,
    signatures: &'a [(Vec<Type>, Option<Type>)],
    scopes: Vec<Vec<(String, u32)>>,
    info: &'a mut FuncInfo,
    res: &'a mut Vec<Res>,
    types: &'a mut Vec<Option<Type>>,
    owner: &'a mut Vec<u32>,
    spans: &'a mut Vec<Span>,
}

impl Checker<'_> {
    fn err(&self, span: Span, message: String) -> LinkError {
        ParseError {
            file: self.path.to_string(),
            line: span.start_line,
            column: span.start_col,
            message,
        }
        .into()
    }

    fn mark(&mut self, id: NodeId, span: Span) {
        self.owner[id.ordinal() as usize] = self.func_idx;
        self.spans[id.ordinal() as usize] = span;
    }

    fn lookup(&self, name: &str) -> Option<u32> {
        self.scopes
            .iter()
            .rev()
            .flat_map(|s| s.iter().rev())
            .find(|(n, _)| n == name)
            .map(|(_, slot)| *slot)
    }

    fn declare(
        &mut self,
        name: &str,
        ty: Type,
        decl: NodeId,
        span: Span,
    ) -> Result<u32, LinkError> {
        if self.lookup(name).is_some() || self.consts.contains_key(name) {
            return Err(self.err(span, format!("`{name}` is already declared")));
        }
        if self.by_name.contains_key(name) || Builtin::from_name(name).is_some() {
            return Err(self.err(span, format!("`{name}` names a function")));
        }
        let slot = self.info.slot_decls.len() as u32;
        self.info.slot_decls.push(decl);
        self.info.slot_types.push(ty);
        self.info.slot_names.push(name.to_string());
        self.scopes
            .last_mut()
            .expect("scope")
            .push((name.to_string(), slot));
        Ok(slot)
    }

    fn local(&self, name: &str, span: Span) -> Result<(u32, Type), LinkError> {
        match self.lookup(name) {
            Some(slot) => Ok((slot, self.info.slot_types[slot as usize])),
            None if self.consts.contains_key(name) => {
                Err(self.err(span, format!("cannot assign to constant `{name}`")))
            }
            None => Err(self.err(span, format!("undeclared identifier `{name}`"))),
        }
    }

    fn block(&mut self, block: &Block) -> Result<(), LinkError> {
        self.scopes.push(Vec::new());
        for stmt in &block.stmts {
            self.stmt(stmt)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn expect_type(&self, expr: &Expr, found: Option<Type>, want: Type) -> Result<(), LinkError> {
        if found == Some(want) {
            Ok(())
        } else {
            Err(self.err(
                expr.span,
                format!("expected `{want}` expression, found {}", describe(found)),
            ))
        }
    }

    fn stmt(&mut self, stmt: &Stmt) -> Result<(), LinkError> {
        self.mark(stmt.id, stmt.span);
        match &stmt.kind {
            StmtKind::Let { name, init } => {
                let ty = self.expr(init)?;
                let Some(ty) = ty else {
                    return Err(self.err(init.span, "expression has no value".into()));
                };
                let slot = self.declare(name, ty, stmt.id, stmt.span)?;
                self.res[stmt.id.ordinal() as usize] = Res::Local(slot);
            }
            StmtKind::Assign { name, value } => {
                let (slot, ty) = self.local(name, stmt.span)?;
                let vt = self.expr(value)?;
                self.expect_type(value, vt, ty)?;
                self.res[stmt.id.ordinal() as usize] = Res::Local(slot);
            }
            StmtKind::IndexAssign { base, index, value } => {
                let (slot, ty) = self.local(base, stmt.span)?;
                if ty != Type::Buf {
                    return Err(self.err(stmt.span, format!("`{base}` is not a buffer")));
                }
                let it = self.expr(index)?;
                self.expect_type(index, it, Type::Int)?;
                let vt = self.expr(value)?;
                self.expect_type(value, vt, Type::Int)?;
                self.res[stmt.id.ordinal() as usize] = Res::Local(slot);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let ct = self.expr(cond)?;
                self.expect_type(cond, ct, Type::Int)?;
                self.block(then_block)?;
                if let Some(b) = else_block {
                    self.block(b)?;
                }
            }
            StmtKind::While { cond, body } => {
                let ct = self.expr(cond)?;
                self.expect_type(cond, ct, Type::Int)?;
                self.block(body)?;
            }
            StmtKind::Return(value) => match (value, self.ret) {
                (None, None) => {}
                (Some(e), Some(want)) => {
                    let t = self.expr(e)?;
                    self.expect_type(e, t, want)?;
                }
                (None, Some(want)) => {
                    return Err(self.err(stmt.span, format!("missing `{want}` return value")))
                }
                (Some(e), None) => {
                    return Err(self.err(e.span, "function has no return type".into()))
                }
            },
            StmtKind::Expr(e) => {
                self.expr(e)?;
            }
        }
        Ok(())
    }

    fn expr(&mut self, expr: &Expr) -> Result<Option<Type>, LinkError> {
        self.mark(expr.id, expr.span);
        let ty = match &expr.kind {
            ExprKind::Int(_) => Some(Type::Int),
            ExprKind::Var(name) => {
                if let Some(slot) = self.lookup(name) {
                    self.res[expr.id.ordinal() as usize] = Res::Local(slot);
                    Some(self.info.slot_types[slot as usize])
                } else if let Some(&v) = self.consts.get(name) {
                    self.res[expr.id.ordinal() as usize] = Res::Const(v);
                    Some(Type::Int)
                } else {
                    return Err(self.err(expr.span, format!("undeclared identifier `{name}`")));
                }
            }
            ExprKind::Index { base, index } => {
                let Some(slot) = self.lookup(base) else {
                    return Err(self.err(expr.span, format!("undeclared identifier `{base}`")));
                };
                if self.info.slot_types[slot as usize] != Type::Buf {
                    return Err(self.err(expr.span, format!("`{base}` is not a buffer")));
                }
                self.res[expr.id.ordinal() as usize] = Res::Local(slot);
                let it = self.expr(index)?;
                self.expect_type(index, it, Type::Int)?;
                Some(Type::Int)
            }
            ExprKind::Call { callee, args } => {
                let (params, ret, res): (Vec<Type>, Option<Type>, Res) =
                    if let Some(b) = Builtin::from_name(callee) {
                        let (p, r) = b.signature();
                        (p.to_vec(), r, Res::Builtin(b))
                    } else if let Some(&idx) = self.by_name.get(callee) {
                        let (p, r) = &self.signatures[idx as usize];
                        (p.clone(), *r, Res::Func(idx))
                    } else {
                        return Err(self.err(expr.span, format!("undeclared function `{callee}`")));
                    };
                if params.len() != args.len() {
                    return Err(LinkError::Arity {
                        callee: callee.clone(),
                        expected: params.len(),
                        found: args.len(),
                        file: self.path.to_string(),
                        line: expr.span.start_line,
                    });
                }
                for (arg, want) in args.iter().zip(params) {
                    let t = self.expr(arg)?;
                    self.expect_type(arg, t, want)?;
                }
                self.res[expr.id.ordinal() as usize] = res;
                ret
            }
            ExprKind::Binary { lhs, rhs, .. } => {
                let lt = self.expr(lhs)?;
                self.expect_type(lhs, lt, Type::Int)?;
                let rt = self.expr(rhs)?;
                self.expect_type(rhs, rt, Type::Int)?;
                Some(Type::Int)
            }
            ExprKind::Unary { operand, .. } => {
                let t = self.expr(operand)?;
                self.expect_type(operand, t, Type::Int)?;
                Some(Type::Int)
            }
        };
        self.types[expr.id.ordinal() as usize] = ty;
        Ok(ty)
    }
}

fn describe(t: Option<Type>) -> String {
    match t {
        Some(t) => format!("`{t}`"),
        None => "no value".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_file;

    fn link_src(files: &[(&str, &str)]) -> Result<Program, LinkError> {
        let modules = files
            .iter()
            .enumerate()
            .map(|(i, (path, src))| parse_file(src, path, i as u32).unwrap())
            .collect();
        link(modules, "main")
    }

    #[test]
    fn cross_file_call_resolves() {
        let p = link_src(&[
            ("main.mc", "fn main() { print(twice(LIMIT)); }"),
            (
                "lib.mc",
                "const LIMIT = 4;\nfn twice(x: int) -> int { return x * 2; }",
            ),
        ])
        .unwrap();
        assert_eq!(p.functions.len(), 2);
        assert_eq!(
            p.function_file(p.function_index("twice").unwrap()),
            "lib.mc"
        );
    }

    #[test]
    fn missing_entry() {
        let err = link_src(&[("a.mc", "fn f() { }")]).unwrap_err();
        assert_eq!(err, LinkError::MissingEntry("main".into()));
    }

    #[test]
    fn arity_mismatch() {
        let err = link_src(&[("a.mc", "fn f(a: int) { }\nfn main() { f(1, 2); }")]).unwrap_err();
        assert!(matches!(
            err,
            LinkError::Arity {
                expected: 1,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn undeclared_identifier() {
        let err = link_src(&[("a.mc", "fn main() { print(x); }")]).unwrap_err();
        assert!(err.to_string().contains("undeclared identifier `x`"));
    }

    #[test]
    fn duplicate_across_files() {
        let err = link_src(&[("a.mc", "fn main() { }"), ("b.mc", "fn main() { }")]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn type_errors() {
        assert!(link_src(&[("a.mc", "fn main() { let b = alloc(2); print(b); }")]).is_err());
        assert!(link_src(&[("a.mc", "fn main() { let x = 1; x[0] = 2; }")]).is_err());
        assert!(link_src(&[("a.mc", "fn main() { let x = print(1); }")]).is_err());
    }

    #[test]
    fn sibling_scopes_may_reuse_names() {
        link_src(&[(
            "a.mc",
            "fn main() { if (1) { let t = 1; print(t); } else { let t = 2; print(t); } }",
        )])
        .unwrap();
        assert!(link_src(&[("a.mc", "fn main() { let t = 1; if (1) { let t = 2; } }")]).is_err());
    }
}

//! Syntax tree for MiniC.
//!
//! Node ids are assigned in pre-order while parsing and packed as
//! `file_id << 20 | ordinal`, so re-parsing a rendered module yields the
//! same ids for the same structure.

use serde::{Deserialize, Serialize};
use std::fmt;

const ORDINAL_BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn new(file_id: u32, ordinal: u32) -> Self {
        debug_assert!(ordinal < (1 << ORDINAL_BITS));
        NodeId((file_id << ORDINAL_BITS) | ordinal)
    }

    pub fn file_id(self) -> u32 {
        self.0 >> ORDINAL_BITS
    }

    pub fn ordinal(self) -> u32 {
        self.0 & ((1 << ORDINAL_BITS) - 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Source region. Lines and columns are 1-based; the end column is exclusive.
/// Columns count bytes.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Span {
    pub file_id: u32,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn to(self, end: Span) -> Span {
        Span {
            file_id: self.file_id,
            start_line: self.start_line,
            start_col: self.start_col,
            end_line: end.end_line,
            end_col: end.end_col,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Type {
    Int,
    Buf,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("int"),
            Type::Buf => f.write_str("buf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; larger binds tighter. All binary operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }

    /// Operator with the same direction but the opposite strictness
    /// (`<` and `<=`, `>` and `>=`).
    pub fn flip_strictness(self) -> Option<BinOp> {
        match self {
            BinOp::Lt => Some(BinOp::Le),
            BinOp::Le => Some(BinOp::Lt),
            BinOp::Gt => Some(BinOp::Ge),
            BinOp::Ge => Some(BinOp::Gt),
            _ => None,
        }
    }

    /// The operator obtained by swapping the operands (`a < b` is `b > a`).
    pub fn mirrored(self) -> BinOp {
        match self {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub id: NodeId,
    pub span: Span,
    pub kind: ExprKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    Int(i64),
    Var(String),
    Index {
        base: String,
        index: Box<Expr>,
    },
    Call {
        callee: String,
        args: Vec<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Unary {
        op: UnOp,
        operand: Box<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub id: NodeId,
    pub span: Span,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Let {
        name: String,
        init: Expr,
    },
    Assign {
        name: String,
        value: Expr,
    },
    IndexAssign {
        base: String,
        index: Expr,
        value: Expr,
    },
    If {
        cond: Expr,
        then_block: Block,
        else_block: Option<Block>,
    },
    While {
        cond: Expr,
        body: Block,
    },
    Return(Option<Expr>),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub span: Span,
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub id: NodeId,
    pub span: Span,
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub id: NodeId,
    pub span: Span,
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    pub body: Block,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstDecl {
    pub id: NodeId,
    pub span: Span,
    pub name: String,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Const(ConstDecl),
    Func(Function),
}

/// A `//` comment; kept for style checks, never rendered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comment {
    pub line: u32,
    pub text: String,
}

/// One parsed `.mc` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Module {
    pub file_id: u32,
    pub path: String,
    pub items: Vec<Item>,
    pub comments: Vec<Comment>,
    /// Number of node ids handed out in this file.
    pub node_count: u32,
}

impl Module {
    pub fn functions(&self) -> impl Iterator<Item = &Function> {
        self.items.iter().filter_map(|item| match item {
            Item::Func(f) => Some(f),
            Item::Const(_) => None,
        })
    }

    pub fn consts(&self) -> impl Iterator<Item = &ConstDecl> {
        self.items.iter().filter_map(|item| match item {
            Item::Const(c) => Some(c),
            Item::Func(_) => None,
        })
    }

    /// Number of statements in all function bodies, nested ones included.
    pub fn statement_count(&self) -> usize {
        fn count(block: &Block) -> usize {
            block
                .stmts
                .iter()
                .map(|s| {
                    1 + match &s.kind {
                        StmtKind::If {
                            then_block,
                            else_block,
                            ..
                        } => count(then_block) + else_block.as_ref().map_or(0, count),
                        StmtKind::While { body, .. } => count(body),
                        _ => 0,
                    }
                })
                .sum()
        }
        self.functions().map(|f| count(&f.body)).sum()
    }

    /// Copy with every span cleared and comments dropped; two modules are
    /// structurally equal when their stripped forms are equal.
    pub fn stripped(&self) -> Module {
        let mut m = self.clone();
        m.comments.clear();
        for item in &mut m.items {
            match item {
                Item::Const(c) => c.span = Span::default(),
                Item::Func(f) => {
                    f.span = Span::default();
                    for p in &mut f.params {
                        p.span = Span::default();
                    }
                    strip_block(&mut f.body);
                }
            }
        }
        m
    }

    pub fn structurally_eq(&self, other: &Module) -> bool {
        self.stripped() == other.stripped()
    }
}

fn strip_block(block: &mut Block) {
    block.span = Span::default();
    for stmt in &mut block.stmts {
        stmt.span = Span::default();
        match &mut stmt.kind {
            StmtKind::Let { init: e, .. }
            | StmtKind::Assign { value: e, .. }
            | StmtKind::Expr(e)
            | StmtKind::Return(Some(e)) => strip_expr(e),
            StmtKind::Return(None) => {}
            StmtKind::IndexAssign { index, value, .. } => {
                strip_expr(index);
                strip_expr(value);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                strip_expr(cond);
                strip_block(then_block);
                if let Some(b) = else_block {
                    strip_block(b);
                }
            }
            StmtKind::While { cond, body } => {
                strip_expr(cond);
                strip_block(body);
            }
        }
    }
}

fn strip_expr(expr: &mut Expr) {
    expr.span = Span::default();
    match &mut expr.kind {
        ExprKind::Int(_) | ExprKind::Var(_) => {}
        ExprKind::Index { index, .. } => strip_expr(index),
        ExprKind::Call { args, .. } => args.iter_mut().for_each(strip_expr),
        ExprKind::Binary { lhs, rhs, .. } => {
            strip_expr(lhs);
            strip_expr(rhs);
        }
        ExprKind::Unary { operand, .. } => strip_expr(operand),
    }
}

impl Expr {
    /// Pre-order walk over this expression and its children.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Int(_) | ExprKind::Var(_) => {}
            ExprKind::Index { index, .. } => index.walk(f),
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            ExprKind::Unary { operand, .. } => operand.walk(f),
        }
    }

    /// Names of variables read anywhere in this expression (index bases
    /// included).
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| match &e.kind {
            ExprKind::Var(name) => out.push(name.as_str()),
            ExprKind::Index { base, .. } => out.push(base.as_str()),
            _ => {}
        });
        out
    }
}

impl Block {
    /// Pre-order walk over every statement, nested blocks included.
    pub fn walk_stmts<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        for stmt in &self.stmts {
            f(stmt);
            match &stmt.kind {
                StmtKind::If {
                    then_block,
                    else_block,
                    ..
                } => {
                    then_block.walk_stmts(f);
                    if let Some(b) = else_block {
                        b.walk_stmts(f);
                    }
                }
                StmtKind::While { body, .. } => body.walk_stmts(f),
                _ => {}
            }
        }
    }
}

impl Stmt {
    /// Expressions that appear directly in this statement (not in nested
    /// blocks).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Let { init: e, .. }
            | StmtKind::Assign { value: e, .. }
            | StmtKind::Expr(e)
            | StmtKind::Return(Some(e)) => vec![e],
            StmtKind::Return(None) => vec![],
            StmtKind::IndexAssign { index, value, .. } => vec![index, value],
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
        }
    }
}

use std::collections::HashSet;

use super::ast::*;
use super::error::ParseError;
use super::lexer::{lex, Tok, Token};

/// Parses one `.mc` file. Name resolution across files happens at link time.
pub fn parse_file(source: &str, path: &str, file_id: u32) -> Result<Module, ParseError> {
    let lexed = lex(source, path)?;
    let mut parser = Parser {
        tokens: lexed.tokens,
        pos: 0,
        path,
        file_id,
    };
    let mut items = Vec::new();
    let mut names = HashSet::new();
    while parser.peek() != &Tok::Eof {
        let item = parser.item()?;
        let (name, span) = match &item {
            Item::Const(c) => (c.name.clone(), c.span),
            Item::Func(f) => (f.name.clone(), f.span),
        };
        if !names.insert(name.clone()) {
            return Err(parser.error_at(
                span.start_line,
                span.start_col,
                format!("duplicate definition of `{name}`"),
            ));
        }
        items.push(item);
    }
    let mut module = Module {
        file_id,
        path: path.to_string(),
        items,
        comments: lexed.comments,
        node_count: 0,
    };
    renumber(&mut module);
    Ok(module)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    path: &'a str,
    file_id: u32,
}

const PLACEHOLDER: NodeId = NodeId(0);

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn current(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn error_at(&self, line: u32, column: u32, message: String) -> ParseError {
        ParseError {
            file: self.path.to_string(),
            line,
            column,
            message,
        }
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let tok = self.current();
        self.error_at(
            tok.line,
            tok.col,
            format!("expected {expected}, found {}", tok.tok.describe()),
        )
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.advance())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn ident(&mut self, expected: &str) -> Result<(String, Token), ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => Ok((name, self.advance())),
            _ => Err(self.unexpected(expected)),
        }
    }

    fn span(&self, start: &Token, end: &Token) -> Span {
        Span {
            file_id: self.file_id,
            start_line: start.line,
            start_col: start.col,
            end_line: end.end_line,
            end_col: end.end_col,
        }
    }

    fn last(&self) -> &Token {
        &self.tokens[self.pos.saturating_sub(1)]
    }

    fn item(&mut self) -> Result<Item, ParseError> {
        match self.peek() {
            Tok::Const => {
                let start = self.advance();
                let (name, _) = self.ident("constant name")?;
                self.expect(Tok::Assign, "`=`")?;
                let negative = if *self.peek() == Tok::Minus {
                    self.advance();
                    true
                } else {
                    false
                };
                let value = match self.peek() {
                    Tok::Int(v) => {
                        let v = *v;
                        self.advance();
                        if negative {
                            -v
                        } else {
                            v
                        }
                    }
                    _ => return Err(self.unexpected("integer constant")),
                };
                let end = self.expect(Tok::Semi, "`;`")?;
                Ok(Item::Const(ConstDecl {
                    id: PLACEHOLDER,
                    span: self.span(&start, &end),
                    name,
                    value,
                }))
            }
            Tok::Fn => self.function().map(Item::Func),
            _ => Err(self.unexpected("`fn` or `const`")),
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        match self.peek() {
            Tok::IntTy => {
                self.advance();
                Ok(Type::Int)
            }
            Tok::BufTy => {
                self.advance();
                Ok(Type::Buf)
            }
            _ => Err(self.unexpected("type `int` or `buf`")),
        }
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let start = self.expect(Tok::Fn, "`fn`")?;
        let (name, _) = self.ident("function name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (pname, ptok) = self.ident("parameter or `)`")?;
                self.expect(Tok::Colon, "`:`")?;
                let ty = self.ty()?;
                let end = self.last().clone();
                params.push(Param {
                    id: PLACEHOLDER,
                    span: self.span(&ptok, &end),
                    name: pname,
                    ty,
                });
                if *self.peek() == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        let ret = if *self.peek() == Tok::Arrow {
            self.advance();
            Some(self.ty()?)
        } else {
            None
        };
        let body = self.block()?;
        let end = self.last().clone();
        Ok(Function {
            id: PLACEHOLDER,
            span: self.span(&start, &end),
            name,
            params,
            ret,
            body,
        })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        let start = self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return Err(self.unexpected("`}`"));
            }
            stmts.push(self.stmt()?);
        }
        let end = self.advance();
        Ok(Block {
            span: self.span(&start, &end),
            stmts,
        })
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.current().clone();
        let kind = match self.peek().clone() {
            Tok::Let => {
                self.advance();
                let (name, _) = self.ident("variable name")?;
                self.expect(Tok::Assign, "`=`")?;
                let init = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Let { name, init }
            }
            Tok::If => return self.if_stmt(),
            Tok::While => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Return => {
                self.advance();
                let value = if *self.peek() == Tok::Semi {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Return(value)
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::Assign => {
                self.advance();
                self.advance();
                let value = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Assign { name, value }
            }
            _ => {
                let expr = self.expr()?;
                if *self.peek() == Tok::Assign {
                    if let ExprKind::Index { base, index } = expr.kind {
                        self.advance();
                        let value = self.expr()?;
                        self.expect(Tok::Semi, "`;`")?;
                        StmtKind::IndexAssign {
                            base,
                            index: *index,
                            value,
                        }
                    } else {
                        return Err(self.unexpected("`;`"));
                    }
                } else {
                    self.expect(Tok::Semi, "`;`")?;
                    StmtKind::Expr(expr)
                }
            }
        };
        let end = self.last().clone();
        Ok(Stmt {
            id: PLACEHOLDER,
            span: self.span(&start, &end),
            kind,
        })
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.expect(Tok::If, "`if`")?;
        self.expect(Tok::LParen, "`(`")?;
        let cond = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        let then_block = self.block()?;
        let else_block = if *self.peek() == Tok::Else {
            self.advance();
            if *self.peek() == Tok::If {
                let nested = self.if_stmt()?;
                Some(Block {
                    span: nested.span,
                    stmts: vec![nested],
                })
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        // An empty else is dropped so that rendering can omit it.
        let else_block = else_block.filter(|b| !b.stmts.is_empty());
        let end = self.last().clone();
        Ok(Stmt {
            id: PLACEHOLDER,
            span: self.span(&start, &end),
            kind: StmtKind::If {
                cond,
                then_block,
                else_block,
            },
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary_op(&self) -> Option<BinOp> {
        Some(match self.peek() {
            Tok::OrOr => BinOp::Or,
            Tok::AndAnd => BinOp::And,
            Tok::EqEq => BinOp::Eq,
            Tok::NotEq => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            Tok::Percent => BinOp::Rem,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binary_op() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.advance();
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr {
                id: PLACEHOLDER,
                span,
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let op = match self.peek() {
            Tok::Minus => UnOp::Neg,
            Tok::Bang => UnOp::Not,
            _ => return self.primary(),
        };
        let start = self.advance();
        let operand = self.unary()?;
        let span = self.span(&start, &start).to(operand.span);
        Ok(Expr {
            id: PLACEHOLDER,
            span,
            kind: ExprKind::Unary {
                op,
                operand: Box::new(operand),
            },
        })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.current().clone();
        match start.tok.clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(Expr {
                    id: PLACEHOLDER,
                    span: self.span(&start, &start),
                    kind: ExprKind::Int(v),
                })
            }
            Tok::LParen => {
                self.advance();
                let mut inner = self.expr()?;
                let end = self.expect(Tok::RParen, "`)`")?;
                // The span of a parenthesized expression includes the parens.
                inner.span = self.span(&start, &end);
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance();
                match self.peek() {
                    Tok::LParen => {
                        self.advance();
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            loop {
                                args.push(self.expr()?);
                                if *self.peek() == Tok::Comma {
                                    self.advance();
                                } else {
                                    break;
                                }
                            }
                        }
                        let end = self.expect(Tok::RParen, "`,` or `)`")?;
                        Ok(Expr {
                            id: PLACEHOLDER,
                            span: self.span(&start, &end),
                            kind: ExprKind::Call { callee: name, args },
                        })
                    }
                    Tok::LBracket => {
                        self.advance();
                        let index = self.expr()?;
                        let end = self.expect(Tok::RBracket, "`]`")?;
                        Ok(Expr {
                            id: PLACEHOLDER,
                            span: self.span(&start, &end),
                            kind: ExprKind::Index {
                                base: name,
                                index: Box::new(index),
                            },
                        })
                    }
                    _ => Ok(Expr {
                        id: PLACEHOLDER,
                        span: self.span(&start, &start),
                        kind: ExprKind::Var(name),
                    }),
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

/// Assigns node ids in pre-order.
fn renumber(module: &mut Module) {
    let mut next = 0u32;
    let file_id = module.file_id;
    let mut fresh = || {
        let id = NodeId::new(file_id, next);
        next += 1;
        id
    };
    for item in &mut module.items {
        match item {
            Item::Const(c) => c.id = fresh(),
            Item::Func(f) => {
                f.id = fresh();
                for p in &mut f.params {
                    p.id = fresh();
                }
                renumber_block(&mut f.body, &mut fresh);
            }
        }
    }
    module.node_count = next;
}

fn renumber_block(block: &mut Block, fresh: &mut dyn FnMut() -> NodeId) {
    for stmt in &mut block.stmts {
        stmt.id = fresh();
        match &mut stmt.kind {
            StmtKind::Let { init: e, .. }
            | StmtKind::Assign { value: e, .. }
            | StmtKind::Expr(e)
            | StmtKind::Return(Some(e)) => renumber_expr(e, fresh),
            StmtKind::Return(None) => {}
            StmtKind::IndexAssign { index, value, .. } => {
                renumber_expr(index, fresh);
                renumber_expr(value, fresh);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                renumber_expr(cond, fresh);
                renumber_block(then_block, fresh);
                if let Some(b) = else_block {
                    renumber_block(b, fresh);
                }
            }
            StmtKind::While { cond, body } => {
                renumber_expr(cond, fresh);
                renumber_block(body, fresh);
            }
        }
    }
}

fn renumber_expr(expr: &mut Expr, fresh: &mut dyn FnMut() -> NodeId) {
    expr.id = fresh();
    match &mut expr.kind {
        ExprKind::Int(_) | ExprKind::Var(_) => {}
        ExprKind::Index { index, .. } => renumber_expr(index, fresh),
        ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| renumber_expr(a, fresh)),
        ExprKind::Binary { lhs, rhs, .. } => {
            renumber_expr(lhs, fresh);
            renumber_expr(rhs, fresh);
        }
        ExprKind::Unary { operand, .. } => renumber_expr(operand, fresh),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let m = parse_file("fn main() -> int { return 0; }", "main.mc", 0).unwrap();
        let f: Vec<_> = m.functions().collect();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].name, "main");
        assert_eq!(f[0].ret, Some(Type::Int));
        assert_eq!(f[0].body.stmts.len(), 1);
        assert!(matches!(
            f[0].body.stmts[0].kind,
            StmtKind::Return(Some(Expr {
                kind: ExprKind::Int(0),
                ..
            }))
        ));
    }

    #[test]
    fn malformed_params_report_line_one() {
        let err = parse_file("fn f( { }", "bad.mc", 0).unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.file, "bad.mc");
        assert!(err.message.contains("parameter or `)`"), "{}", err.message);
    }

    #[test]
    fn precedence_and_associativity() {
        let m = parse_file("fn f() { let x = 1 - 2 - 3 * 4; }", "a.mc", 0).unwrap();
        let f = m.functions().next().unwrap();
        let StmtKind::Let { init, .. } = &f.body.stmts[0].kind else {
            panic!()
        };
        // (1 - 2) - (3 * 4)
        let ExprKind::Binary { op, lhs, rhs } = &init.kind else {
            panic!()
        };
        assert_eq!(*op, BinOp::Sub);
        assert!(matches!(lhs.kind, ExprKind::Binary { op: BinOp::Sub, .. }));
        assert!(matches!(rhs.kind, ExprKind::Binary { op: BinOp::Mul, .. }));
    }

    #[test]
    fn empty_else_is_dropped() {
        let m = parse_file("fn f() { if (1) { } else { } }", "a.mc", 0).unwrap();
        let f = m.functions().next().unwrap();
        assert!(matches!(
            f.body.stmts[0].kind,
            StmtKind::If {
                else_block: None,
                ..
            }
        ));
    }

    #[test]
    fn duplicate_function_rejected() {
        let err = parse_file("fn f() { }\nfn f() { }", "a.mc", 0).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn ids_are_preorder_and_unique() {
        let m = parse_file(
            "fn f(a: int) -> int { if (a < 1) { return a + 2; } return 0; }",
            "a.mc",
            3,
        )
        .unwrap();
        let f = m.functions().next().unwrap();
        assert_eq!(f.id, NodeId::new(3, 0));
        assert_eq!(f.params[0].id, NodeId::new(3, 1));
        assert_eq!(f.body.stmts[0].id, NodeId::new(3, 2));
        assert_eq!(m.node_count, 12);
    }

    #[test]
    fn paren_span_covers_parens() {
        let m = parse_file("fn f(n: int) { if ((n < 0) || n > 9) { } }", "a.mc", 0).unwrap();
        let f = m.functions().next().unwrap();
        let StmtKind::If { cond, .. } = &f.body.stmts[0].kind else {
            panic!()
        };
        assert_eq!(cond.span.start_col, 20);
        assert_eq!(cond.span.end_col, 36);
    }
}

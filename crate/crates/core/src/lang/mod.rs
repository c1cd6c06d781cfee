//! The MiniC language: lexer, parser, canonical renderer, linker and the
//! checking interpreter that doubles as the sanitizer.
//!
//! Semantics worth pinning down:
//! - integers are signed 64-bit; `+ - * /`, `%` and unary `-` trap on
//!   overflow (`OVERFLOW`);
//! - `/` truncates toward zero and `%` takes the sign of the dividend;
//! - `&&` and `||` short-circuit and yield 0 or 1;
//! - reading past the end of the input stops with `INPUT_EXHAUSTED`, not a
//!   crash;
//! - a function with a return type that falls off its end returns 0 (or an
//!   empty buffer).

mod ast;
mod error;
mod interp;
mod lexer;
mod parser;
mod program;
mod render;

pub use ast::*;
pub use error::{LinkError, ParseError};
pub use interp::{
    node_line, node_span, run, run_tagged, stack_digest, BranchId, CrashKind, CrashSignature,
    ExecutionResult, Limits, SinkObservation, StackFrame, Status, TaintTags,
};
pub use parser::parse_file;
pub use program::{link, Builtin, FuncInfo, Program, Res};
pub use render::{render, render_expr};

/// Parses `(path, source)` pairs (file ids in order) and links them.
pub fn compile(files: &[(&str, &str)], entry: &str) -> Result<Program, LinkError> {
    let modules = files
        .iter()
        .enumerate()
        .map(|(i, (path, src))| parse_file(src, path, i as u32))
        .collect::<Result<Vec<_>, _>>()?;
    link(modules, entry)
}

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}:{line}:{column}: {message}")]
pub struct ParseError {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("entry function `{0}` not found")]
    MissingEntry(String),
    #[error("call to `{callee}` expects {expected} argument(s), got {found} at {file}:{line}")]
    Arity {
        callee: String,
        expected: usize,
        found: usize,
        file: String,
        line: u32,
    },
    #[error(transparent)]
    Resolve(#[from] ParseError),
}

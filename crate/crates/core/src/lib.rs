//! Deterministic generator of repository-level vulnerability benchmarks for
//! the MiniC language.

pub mod analysis;
pub mod benchkit;
pub mod coevolve;
pub mod digest;
pub mod harness;
pub mod inject;
pub mod json;
pub mod lang;
pub mod pov;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

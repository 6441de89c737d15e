//! Functional tensor IR: syntax tree, parser, printer, type inference,
//! A-normal form and annotation checks.

pub mod anf;
pub mod annotations;
pub mod ast;
pub mod parser;
pub mod printer;
pub mod types;

pub use annotations::{validate_annotations, ValidationReport};
pub use ast::*;
pub use parser::parse_program;
pub use printer::print_program;
pub use types::{infer_types, FnType, TypedProgram};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("duplicate definition of @{name} at {line}:{col}")]
    DuplicateDefinition {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("no @main function")]
    MissingEntry,
    #[error("unknown identifier `{name}` in {context}")]
    UnknownIdentifier { name: String, context: String },
    #[error("{op} expects {expected} arguments, got {actual}")]
    Arity {
        op: String,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: String,
        expected: String,
        actual: String,
    },
    #[error("type mismatch in {context}: {expected} vs {actual}")]
    TypeMismatch {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("unbound variable `{name}` in @{func}")]
    UnboundVariable { name: String, func: String },
    #[error("infinite type in @{func}: {detail}")]
    InfiniteType { func: String, detail: String },
    #[error("cannot determine the type of {what} in @{func}")]
    Ambiguous { what: String, func: String },
    #[error("calls are data-dependent: {detail}")]
    DependentConcurrentCalls { detail: String },
    #[error("concurrent group {group} in @{func}: {detail}")]
    ConcurrentLayout {
        group: u32,
        func: String,
        detail: String,
    },
    #[error("phase numbering is not contiguous from 0: {phases:?}")]
    NonContiguousPhases { phases: Vec<u32> },
    #[error("stage {stage} of @main carries two phase annotations")]
    PhaseConflict { stage: usize },
}

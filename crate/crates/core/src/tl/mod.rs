//! Truncated linear temporal logic over finite traces: syntax, text format,
//! quantitative semantics, Boolean reference semantics, and simplification.

mod eval;
mod formula;
mod parse;
pub mod random;
mod simplify;

use thiserror::Error;

pub use eval::{
    boolean_eval, robustness, robustness_signal, satisfies, Program, Scratch, Trace, B_BOT, B_TOP,
};
pub use formula::{Ap, Cmp, Formula, Op, ParamVector, Threshold};
pub use parse::{format_formula, format_formula_with, parse_formula, parse_formula_with, FeatureNames};
pub use simplify::simplify;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TlError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("negation applied to a non-atomic formula at byte {offset}")]
    NegationNotOnAp { offset: usize },
    #[error("unknown feature '{name}' at byte {offset}")]
    UnknownFeature { name: String, offset: usize },
    #[error("time index {t} out of range for trace of length {len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("formula has unassigned parameters")]
    NonConcrete,
    #[error("missing value for parameter ?p{0}")]
    MissingParam(usize),
    #[error("value given for unknown parameter ?p{0}")]
    ExtraParam(usize),
    #[error("state dimension mismatch at t={at}: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize, at: usize },
    #[error("trace has no states")]
    EmptyTrace,
    #[error("non-finite state value at t={at}")]
    NonFinite { at: usize },
}

impl TlError {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> Self {
        TlError::Syntax { offset, message: message.into() }
    }
}

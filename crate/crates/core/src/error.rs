use alloc::string::String;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transition row {row} has no observed transitions and smoothing is zero")]
    DegenerateRow { row: usize },
    #[error("infeasible action: cutting {action} with only {remaining} standing")]
    InfeasibleAction { action: f64, remaining: f64 },
    #[error("outside the solved domain: {0}")]
    Domain(String),
    #[error("record {record}: {reason}")]
    Data { record: String, reason: String },
    #[error("logger share is undefined when both entry rates are zero")]
    UndefinedShare,
    #[error("first-order condition is singular at bid {bid}")]
    Singular { bid: f64 },
    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },
    #[error("no active bidder can be drawn: both entry rates are zero")]
    NoEntrants,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

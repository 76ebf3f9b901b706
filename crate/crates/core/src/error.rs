use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::model::Violation;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A state, action, or pair index fell outside its range.
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// Malformed argument: wrong length, non-finite entry, empty list.
    Input(String),
    /// A model failed validation.
    InvalidModel(Vec<Violation>),
    /// A dense solve did not reach the required residual.
    Numerical {
        context: String,
        residual: f64,
    },
    /// Features do not span R^d; `direction` is orthogonal to every feature.
    RankDeficient {
        direction: Vec<f64>,
    },
    /// An iterative method hit its iteration cap.
    Convergence {
        iterations: usize,
        delta: f64,
    },
    /// Linear program has no feasible point. `certificate` is a Farkas vector
    /// `y` with `y^T A <= 0` and `y^T b > 0` for the equality-form program.
    Infeasible {
        certificate: Vec<f64>,
        residual: f64,
    },
    Parameter(String),
    Generation(String),
    /// Buffer request above the in-memory cap.
    TooLarge {
        samples: u64,
        cap: u64,
    },
    /// A solver or evaluator failed inside the outer loop.
    Oracle {
        iteration: usize,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Index { what, index, bound } => {
                write!(f, "{what} index {index} out of range (< {bound})")
            }
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::InvalidModel(violations) => {
                write!(f, "model has {} violation(s)", violations.len())?;
                for v in violations {
                    write!(f, "; {v}")?;
                }
                Ok(())
            }
            Error::Numerical { context, residual } => {
                write!(f, "numerical failure in {context} (residual {residual:e})")
            }
            Error::RankDeficient { direction } => {
                write!(f, "feature matrix is rank deficient along direction {direction:?}")
            }
            Error::Convergence { iterations, delta } => {
                write!(f, "no convergence after {iterations} iterations (delta = {delta})")
            }
            Error::Infeasible { residual, .. } => {
                write!(f, "linear program infeasible (phase-one residual {residual:e})")
            }
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Generation(msg) => write!(f, "generation error: {msg}"),
            Error::TooLarge { samples, cap } => {
                write!(f, "buffer of {samples} samples exceeds the cap of {cap}")
            }
            Error::Oracle { iteration, source } => {
                write!(f, "oracle failed at outer iteration {iteration}: {source}")
            }
        }
    }
}

impl core::error::Error for Error {}

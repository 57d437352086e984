use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} is too close to zero ({value:?}) at x = {x:?}")]
    NearZero {
        what: &'static str,
        x: f64,
        value: f64,
    },

    #[error("negative discriminant {discriminant:?} at x = {x:?}: phi has no real branch")]
    ComplexRoot { x: f64, discriminant: f64 },

    #[error("discriminant vanishes at x = {x:?}: phi branch is not smooth")]
    DiscriminantVanishes { x: f64 },

    #[error("step budget of {max_steps} exhausted at x = {x:?}")]
    StepLimit { x: f64, max_steps: usize },

    #[error("step size underflow at x = {x:?}")]
    StepUnderflow { x: f64 },

    #[error("exponential weight overflows: |H| exceeds 700 at x = {x:?}")]
    Overflow { x: f64 },

    #[error("solution is not finite at x = {x:?}")]
    NonFinite { x: f64 },

    #[error("equation is singular (|g0 + g1*y| < 1e-9) at x = {x:?}")]
    Singular { x: f64 },

    #[error("grids differ: {0}")]
    GridMismatch(String),
}

impl Error {
    /// True for failures of the numerics rather than of the input text.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Parse(_) | Error::Invalid(_) | Error::GridMismatch(_)
        )
    }
}

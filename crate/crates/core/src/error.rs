use thiserror::Error;

/// Errors raised by the solvers and by parameter validation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no sign change of F(u) - 1/(2u) on [{lo:e}, {hi:e}] (F-G = {f_lo:e} .. {f_hi:e})")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("exponent {mu} must exceed {bound}")]
    ExponentTooSmall { mu: f64, bound: f64 },

    #[error("point {x} lies outside the grid [0, {limit}]")]
    OutsideGrid { x: f64, limit: f64 },

    #[error("zero pivot in tridiagonal solve at row {row}")]
    SingularSystem { row: usize },

    #[error("Newton iteration failed at time step {step}: residual {residual:e} after {iterations} iterations")]
    NewtonFailed { step: usize, residual: f64, iterations: usize },

    #[error("quadrature did not reach tolerance: estimated error {error:e}")]
    Quadrature { error: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason() })
    }
}

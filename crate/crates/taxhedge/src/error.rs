use thiserror::Error;

/// Errors produced by model construction, solvers, and simulators.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition (bad ordering, out of
    /// range, non-finite, unknown state index, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Two inputs that must describe the same discretization do not
    /// (grid/path/strategy length or horizon mismatches).
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    /// A computation produced a non-finite value.
    #[error("numerical failure: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}

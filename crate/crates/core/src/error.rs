use thiserror::Error;

/// Errors raised by model evaluation, integration and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("model domain violation: {0}")]
    Domain(String),
    #[error("operation requires a conservative autonomous system ({0})")]
    NotConservative(&'static str),
    #[error("multiplier matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("matrix is singular or ill-conditioned ({0})")]
    Singular(String),
    #[error("trajectory too short: need at least {needed} nodes, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("trajectory grid is not uniform")]
    NonUniformGrid,
    #[error("trajectory grids do not match")]
    GridMismatch,
    #[error("integration step underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("missing model component: {0}")]
    Missing(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

pub(crate) fn ensure_finite_slice(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

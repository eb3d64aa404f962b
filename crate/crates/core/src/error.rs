use thiserror::Error;

/// Errors raised by the solvers and the experiment runner.
#[derive(Debug, Error)]
pub enum LabError {
    /// A caller-side precondition does not hold (bad starting point, horizon, sweep...).
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A numeric parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input coordinates are NaN or infinite.
    #[error("non-finite input: {0}")]
    Domain(String),
    /// The experiment configuration could not be understood.
    #[error("configuration error: {0}")]
    Config(String),
    /// A solver did not converge or produced a flagged result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Process exit status used by the batch runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Domain(format!("{what}: {x:?}")))
    }
}

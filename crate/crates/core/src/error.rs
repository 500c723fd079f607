use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate kernel matrix: {0}")]
    DegenerateKernel(String),

    #[error("degenerate direction: curvature {curvature:.3e} is not positive")]
    DegenerateDirection { curvature: f64 },

    #[error("jointly singular constraint forms")]
    JointlySingular,

    #[error("no convergence after {iterations} iterations (best objective {best_value:.6e})")]
    NonConvergence {
        iterations: usize,
        best_value: f64,
        best_iterate: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures caused by the data or configuration rather than
    /// by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::DimensionMismatch { .. } | Error::InvalidInput(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

use thiserror::Error;

/// All failure modes of the toolkit.
///
/// Errors split into two broad categories used for process exit codes:
/// input/configuration problems (exit code 1) and numerical failures such as
/// loss of coercivity or a rigor violation (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter outside domain: {0}")]
    OutOfDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Cholesky factorization of a truth operator failed; for the shipped
    /// coercive problems this signals loss of coercivity at the parameter.
    #[error("loss of coercivity: {0}")]
    CoercivityLoss(String),

    /// The dense reduced system was not positive definite.
    #[error("reduced coercivity loss: {0}")]
    ReducedCoercivityLoss(String),

    #[error("basis is not X-orthonormal (max deviation {0:.3e})")]
    NonOrthonormalBasis(f64),

    /// Gram-Schmidt extension rejected a linearly dependent vector.
    #[error("dependent vector: defect norm {defect:.3e} vs vector norm {norm:.3e}")]
    DependentVector { defect: f64, norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for validation/config errors, 2 for numerical
    /// failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::CoercivityLoss(_)
            | Error::ReducedCoercivityLoss(_)
            | Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Variants split into two families: precondition violations (bad input,
/// unsupported size, invalid model) and numerical failures (quadrature did
/// not converge, a covariance block lost positive definiteness, ...). The
/// command-line front end maps them onto different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid covariance model: {0}")]
    InvalidModel(String),

    #[error("operation requires an analytic covariance model (got moments-only)")]
    NeedsAnalyticModel,

    #[error("matrix is not skew-symmetric (max |A + A^T| = {0:e})")]
    NotSkew(f64),

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e}")]
    Quadrature { estimate: f64, error_bound: f64 },

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("covariance block is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("periodic domain too small: {0}")]
    DomainTooSmall(String),

    #[error("circulant embedding failed: negative spectral mass fraction {0:e}")]
    Embedding(f64),

    #[error("not enough data: {0}")]
    TooFew(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics themselves, as opposed to inputs
    /// that violate an operation's preconditions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::Singular(_)
                | Error::NotPsd(_)
                | Error::Consistency(_)
                | Error::Embedding(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

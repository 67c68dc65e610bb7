use alloc::string::String;

/// Errors raised by the covariance scattering core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CstError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("covariance is degenerate: largest eigenvalue {0:e} is not positive")]
    DegenerateCovariance(f64),
    #[error("operator spectrum is identically zero")]
    DegenerateSpectrum,
    #[error("number of scales must be at least 2, got {0}")]
    InvalidScaleCount(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("eigenvalue {value} outside kernel domain [0, {upper}]")]
    DomainError { value: f64, upper: f64 },
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeError { expected: usize, found: usize },
    #[error("index {index} out of range for dimension {len}")]
    IndexError { index: usize, len: usize },
    #[error("number of components {k} must lie in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("linear system is singular; use a positive regularization")]
    SingularSystem,
}

impl CstError {
    /// True for failures of a numerical routine rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CstError::NoConvergence(_)
                | CstError::DegenerateCovariance(_)
                | CstError::DegenerateSpectrum
                | CstError::SingularSystem
        )
    }
}

pub type Result<T> = core::result::Result<T, CstError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site {site} out of range for {n_qubits} qubits")]
    SiteOutOfRange { site: usize, n_qubits: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("linear program is infeasible")]
    LpInfeasible,
    #[error("linear program is unbounded")]
    LpUnbounded,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing derivative for {0}")]
    MissingDerivative(String),
    #[error("unresolved dependency: {0}")]
    Dependency(String),
    #[error("dense evaluation supports at most {max} qubits, got {got}")]
    TooManyQubits { max: usize, got: usize },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::LpInfeasible | Error::LpUnbounded | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

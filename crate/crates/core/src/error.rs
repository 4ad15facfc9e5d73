use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("step size too large: alpha * lambda_1 = {0} exceeds 1")]
    StepTooLarge(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("head bound only: index {index} exceeds 2k* = {limit}")]
    HeadBoundOnly { index: usize, limit: f64 },

    #[error("insufficient spectrum: {0}")]
    InsufficientSpectrum(String),

    #[error("non-contractive: |q| = {0} is not below 1")]
    NonContractive(f64),

    #[error("matrix is indefinite: {0}")]
    Indefinite(String),

    #[error("bound undefined: {0}")]
    BoundUndefined(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Broad class of the failure, used to pick process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::StepTooLarge(_)
            | Error::Dimension(_)
            | Error::IndexOutOfRange { .. }
            | Error::HeadBoundOnly { .. }
            | Error::Format(_) => ErrorKind::Validation,
            Error::InsufficientSpectrum(_)
            | Error::NonContractive(_)
            | Error::Indefinite(_)
            | Error::BoundUndefined(_) => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("regularity violation: {0}")]
    RegularityViolation(String),

    /// The restricted generator is singular (the domain carries no killing).
    #[error("zero eigenvalue: {0}")]
    ZeroEigenvalue(String),

    /// `t` is smaller than anything the graph can resolve.
    #[error("below graph resolution: minimal achievable value {min_achievable:.6e} exceeds target {target:.6e}")]
    BelowResolution { min_achievable: f64, target: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("inconsistency: {0}")]
    Inconsistency(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Prefixes the message with `what`, keeping the variant.
    pub fn context(self, what: &str) -> Self {
        let pre = |m: String| format!("{}: {}", what, m);
        match self {
            Error::InvalidSize(m) => Error::InvalidSize(pre(m)),
            Error::ResourceLimit(m) => Error::ResourceLimit(pre(m)),
            Error::Parse { line, message } => Error::Parse { line, message: pre(message) },
            Error::InvalidArgument(m) => Error::InvalidArgument(pre(m)),
            Error::Domain(m) => Error::Domain(pre(m)),
            Error::RegularityViolation(m) => Error::RegularityViolation(pre(m)),
            Error::ZeroEigenvalue(m) => Error::ZeroEigenvalue(pre(m)),
            Error::Numeric(m) => Error::Numeric(pre(m)),
            Error::Inconsistency(m) => Error::Inconsistency(pre(m)),
            Error::Sampling(m) => Error::Sampling(pre(m)),
            other => other,
        }
    }

    /// Errors that come from numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::ZeroEigenvalue(_) | Error::Inconsistency(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

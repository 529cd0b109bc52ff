use thiserror::Error;

/// Errors raised by estimation, testing and IO routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system (smallest eigenvalue estimate {min_eigenvalue:e})")]
    SingularSystem { min_eigenvalue: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("covariance assembly failed: {0}")]
    CovarianceAssembly(String),

    #[error("gamma family construction failed: {0}")]
    FamilyConstruction(String),

    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    #[error("study failed: {0}")]
    Study(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
}

impl Error {
    /// Broad failure class, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_) | Error::Io { .. } | Error::Csv { .. } | Error::DegenerateGrid(_) => {
                ErrorKind::Input
            }
            Error::Config(_) | Error::InvalidParameter(_) => ErrorKind::Config,
            Error::SingularSystem { .. }
            | Error::CovarianceAssembly(_)
            | Error::FamilyConstruction(_)
            | Error::Diagnostics(_)
            | Error::Study(_) => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Config,
}

pub type Result<T> = std::result::Result<T, Error>;

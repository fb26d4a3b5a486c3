use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Covariance matrix is not positive definite (or not a valid 2N x 2N matrix).
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// alpha(omega) is singular somewhere on the real axis, or the static
    /// stiffness alpha(0) is not positive definite.
    #[error("unstable model: {0}")]
    UnstableModel(String),

    #[error("quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e} after {intervals} intervals")]
    Quadrature {
        achieved: f64,
        requested: f64,
        intervals: usize,
    },

    #[error("SLD equation is singular: {0}")]
    SldSingular(String),

    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    #[error("oracle configuration: {0}")]
    OracleConfig(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short stable identifier written to the `error_code` column of sweep output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateState(_) => "degenerate_state",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::Domain(_) => "domain",
            Error::UnstableModel(_) => "unstable_model",
            Error::Quadrature { .. } => "quadrature",
            Error::SldSingular(_) => "sld_singular",
            Error::DegenerateMeasurement(_) => "degenerate_measurement",
            Error::OracleConfig(_) => "oracle_config",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

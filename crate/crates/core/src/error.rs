use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration; names the offending field(s).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Index outside the ensemble or grid bounds.
    #[error("index out of range: {0}")]
    Index(String),

    /// Internal consistency violation (radius mismatch, zero-norm state,
    /// duplicate reduction contribution, CRC failure, ...).
    #[error("data integrity error: {0}")]
    Integrity(String),

    /// Effective Hamiltonian is singular for a (nearly) tangential beam.
    #[error(
        "tangential singularity: cos(theta) = {cos_theta:.3e} is at or below the floor {floor:.3e}"
    )]
    Tangential { cos_theta: f64, floor: f64 },

    /// Non-finite amplitude encountered while stepping.
    #[error("integration blow-up at step {step}: non-finite amplitude")]
    BlowUp { step: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Runtime(String),

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category for the CLI.
    /// 0 ok, 1 runtime failure, 2 usage, 3 config error, 4 data-integrity error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Integrity(_) => 4,
            _ => 1,
        }
    }
}

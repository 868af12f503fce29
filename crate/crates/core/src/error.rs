use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("target within {distance:.3} m of device {device}; array response is singular")]
    SingularGeometry { device: usize, distance: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("device {0} has an all-zero precoder")]
    DegeneratePrecoder(usize),

    #[error("unidentifiable configuration: {0}")]
    Unidentifiable(String),

    #[error("total precoder energy is zero; the sensing lower bound is infinite")]
    ZeroEnergy,

    #[error("infeasible sensing constraint: epsilon^-1 = {epsilon_inv:.6e} exceeds K*P = {budget:.6e}")]
    Infeasible { epsilon_inv: f64, budget: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json { .. } | Error::Parameter(_) => 2,
            Error::Infeasible { .. } => 3,
            _ => 1,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid cmdp: {0}")]
    InvalidCmdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear system is singular or ill-conditioned (residual {residual:e})")]
    Singular { residual: f64 },

    #[error("constraint is infeasible: Slater slack {slack} is not positive")]
    Infeasible { slack: f64 },

    #[error("slack {slack} below required {required} after {attempts} generation attempts")]
    RegenerationExhausted {
        attempts: u32,
        slack: f64,
        required: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("log consistency check failed: {0}")]
    LogCheck(String),

    #[error("malformed csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at `{path}`: {message}")]
    Json { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Json {
            path: ".".to_string(),
            message: err.to_string(),
        }
    }
}

impl From<serde_path_to_error::Error<serde_json::Error>> for Error {
    fn from(err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        Error::Json {
            path: err.path().to_string(),
            message: err.into_inner().to_string(),
        }
    }
}

use std::path::{Path, PathBuf};

/// Errors of the file and command layer, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    /// Input files that are individually valid but inconsistent.
    #[error("input data: {0}")]
    Data(String),

    #[error("numeric: {0}")]
    Numeric(sdfseg_core::Error),

    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> CliError {
        CliError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

impl From<sdfseg_core::Error> for CliError {
    fn from(e: sdfseg_core::Error) -> Self {
        use sdfseg_core::Error as E;
        match e {
            E::NonFinite { .. } => CliError::Numeric(e),
            E::Config(_) | E::Domain { .. } => CliError::Config(e.to_string()),
            E::Callback(msg) => CliError::Internal(msg),
            E::ShapeMismatch { .. } | E::LengthMismatch { .. } => CliError::Data(e.to_string()),
        }
    }
}

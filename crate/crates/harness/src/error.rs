use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, trace: Vec<f64> },

    #[error("stage `{stage}` failed for config {config_hash}: {source}")]
    Stage {
        stage: &'static str,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Core(#[from] glap_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, config_hash: &str) -> Self {
        match self {
            // config problems keep their kind so the CLI maps them to the right exit code
            e @ (Error::Config(_) | Error::Parse { .. }) => e,
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                config_hash: config_hash.to_string(),
                source: Box::new(e),
            },
        }
    }

    fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Parse { .. })
            || matches!(self.root(), Error::Core(e) if matches!(e,
                glap_core::Error::InvalidArgument(_) | glap_core::Error::DimensionMismatch { .. }))
    }

    pub fn is_numerical(&self) -> bool {
        match self.root() {
            Error::Diverged { .. } => true,
            Error::Core(e) => e.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        if self.is_config() {
            2
        } else if self.is_numerical() {
            3
        } else {
            1
        }
    }
}

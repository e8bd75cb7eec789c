use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Each variant maps to one CLI exit code via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Wrap this error with the name of the stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Dimension(_) | Error::Contract(_) => 1,
        }
    }
}

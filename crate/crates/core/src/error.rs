use std::path::PathBuf;

/// Errors raised across the crate.
///
/// Variants map onto the CLI exit codes through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at {stage} {index}: {message}")]
    Training {
        stage: &'static str,
        index: usize,
        message: String,
    },

    #[error("corrupt artifact: {0}")]
    Corruption(String),

    #[error("missing artifacts in {}: {}", dir.display(), names.join(", "))]
    MissingArtifacts { dir: PathBuf, names: Vec<String> },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the `cpiri` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Spec(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::MissingArtifacts { .. } => 3,
            Error::Training { .. } | Error::Protocol(_) => 4,
            Error::Corruption(_) => 5,
        }
    }

    /// Prefixes the message with extra context, keeping the variant (and so the exit code).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Argument(m) => Error::Argument(format!("{ctx}: {m}")),
            Error::Protocol(m) => Error::Protocol(format!("{ctx}: {m}")),
            Error::Spec(m) => Error::Spec(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Corruption(m) => Error::Corruption(format!("{ctx}: {m}")),
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{ctx}: {message}"),
            },
            Error::Training {
                stage,
                index,
                message,
            } => Error::Training {
                stage,
                index,
                message: format!("{ctx}: {message}"),
            },
            Error::Io { context, source } => Error::Io {
                context: format!("{ctx}: {context}"),
                source,
            },
            e @ Error::MissingArtifacts { .. } => e,
        }
    }
}

use std::io;
use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A record that could not be parsed, with its file and line.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    /// A record that parsed but failed validation.
    #[error("{location}: {source}")]
    Record {
        location: String,
        #[source]
        source: convmpt_core::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] convmpt_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> CliError {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(convmpt_core::Error::InvalidArgument(_)) => 2,
            CliError::Core(e) | CliError::Record { source: e, .. } if e.is_numerical() => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            4 => "numerical",
            _ => match self {
                CliError::Io { .. } => "io",
                CliError::Parse { .. } | CliError::Record { .. } => "data",
                CliError::Format(_) => "format",
                _ => "data",
            },
        }
    }

    /// The single-line JSON written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: Body<'a>,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            exit_code: i32,
            message: String,
        }
        let report = Report { error: Body { kind: self.kind(), exit_code: self.exit_code(), message: self.to_string() } };
        serde_json::to_string(&report).expect("error report serializes")
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Format(e.to_string())
    }
}

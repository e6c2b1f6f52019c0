use std::io;

use serde::Serialize;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] anchorscope::Error),

    #[error("{0}")]
    Usage(String),

    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: anchorscope::Error,
    },
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn io_is_user_error(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::NotFound
            | io::ErrorKind::PermissionDenied
            | io::ErrorKind::InvalidInput
            | io::ErrorKind::InvalidData
            | io::ErrorKind::IsADirectory
    )
}

impl CliError {
    pub fn in_file(path: impl std::fmt::Display, e: anchorscope::Error) -> Self {
        CliError::File {
            path: path.to_string(),
            source: e,
        }
    }

    fn core(&self) -> Option<&anchorscope::Error> {
        match self {
            CliError::Core(e) | CliError::File { source: e, .. } => Some(e),
            _ => None,
        }
    }

    /// 1 for bad input or arguments, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match (self, self.core()) {
            (_, Some(anchorscope::Error::Io(e))) => {
                if io_is_user_error(e) {
                    1
                } else {
                    2
                }
            }
            (_, Some(_)) | (CliError::Usage(_), _) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match (self, self.core()) {
            (_, Some(anchorscope::Error::Io(_))) => "io",
            (_, Some(anchorscope::Error::Record { .. })) => "record",
            (_, Some(_)) => "validation",
            (CliError::Usage(_), _) => "usage",
            _ => "internal",
        }
    }
}

#[derive(Serialize)]
pub struct JsonError<'a> {
    pub kind: &'a str,
    pub message: String,
    pub exit_code: i32,
}

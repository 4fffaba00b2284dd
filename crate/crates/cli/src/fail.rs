use std::path::Path;

use entroprog::Error;
use serde::Serialize;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self {
            error: "validation".into(),
            message: msg.into(),
            exit_code: EXIT_VALIDATION,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            error: "data".into(),
            message: msg.into(),
            exit_code: EXIT_DATA,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            error: "io".into(),
            message: format!("{}: {e}", path.display()),
            exit_code: EXIT_DATA,
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit_code = match &e {
            Error::InvalidInput(_) | Error::Validation(_) | Error::Ordering(_) | Error::Range(_) => EXIT_VALIDATION,
            Error::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self {
            error: e.kind().into(),
            // messages from nested sources may span lines
            message: e.to_string().replace('\n', " "),
            exit_code,
        }
    }
}

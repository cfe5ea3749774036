use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Model(#[from] thermofew::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl ToString) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Config { .. } => EXIT_CONFIG,
            CliError::Model(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Config { .. } => "config",
            CliError::Model(_) => "numerical",
            CliError::Io { .. } => "io",
        }
    }

    /// Machine-readable form printed on stdout.
    pub fn envelope(&self) -> Value {
        let mut err = json!({
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Parse { line: Some(l), .. } => err["line"] = json!(l),
            CliError::Config { field, reason } => {
                err["field"] = json!(field);
                err["reason"] = json!(reason);
            }
            CliError::Io { path, .. } => err["path"] = json!(path),
            _ => {}
        }
        json!({ "error": err })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

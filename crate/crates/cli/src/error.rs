use std::fmt;

use serde_json::json;

/// Failure reported on stderr as `{"error": kind, "message": ...}`.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn report(&self) {
        eprintln!("{}", json!({ "error": self.kind, "message": self.message }));
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<trustscore::Error> for CliError {
    fn from(e: trustscore::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("config", e.to_string())
    }
}

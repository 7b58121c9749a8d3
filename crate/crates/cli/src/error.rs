//! Failures mapped onto process exit codes.

use contflow::Error;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration; exit code 2.
    Validation { field: String, message: String },
    /// Synthesis or certification did not succeed; exit code 3.
    Failure { kind: String, message: String },
    /// A closed form disagrees with its numerical oracle; exit code 4.
    OracleMismatch { message: String },
    /// Output could not be written; exit code 1.
    Io(std::io::Error),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation { field: field.into(), message: message.into() }
    }

    pub fn failure(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Failure { kind: kind.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Failure { .. } => 3,
            CliError::OracleMismatch { .. } => 4,
            CliError::Io(_) => 1,
        }
    }

    /// The structured record printed to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            CliError::Validation { field, message } => {
                json!({"error": "validation", "field": field, "message": message, "exit_code": code})
            }
            CliError::Failure { kind, message } => json!({"error": kind, "message": message, "exit_code": code}),
            CliError::OracleMismatch { message } => {
                json!({"error": "oracle_mismatch", "message": message, "exit_code": code})
            }
            CliError::Io(e) => json!({"error": "io", "message": e.to_string(), "exit_code": code}),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let kind = match &e {
            Error::Invalid(_)
            | Error::Dimension { .. }
            | Error::UnsupportedDimension { .. }
            | Error::Distinctness { .. }
            | Error::Rank { .. }
            | Error::Json(_) => return CliError::validation("input", message),
            Error::TailCertification { .. } => "tail_certification",
            Error::AbsoluteContinuity { .. } => "absolute_continuity",
            Error::BudgetExceeded { .. } | Error::BudgetOverflow { .. } => "switch_budget",
            Error::SearchExhausted { .. } => "truncation_search",
            Error::Complexity { .. } => "complexity",
            Error::Spectral { .. } => "spectral",
            Error::Separation { .. } => "separation",
            Error::Synthesis(_) => "synthesis",
            Error::Evaluation { .. } | Error::Integration(_) => "numerical",
        };
        CliError::failure(kind, message)
    }
}

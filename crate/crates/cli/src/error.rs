//! Exit-code classification and the machine-readable error document written
//! to stderr.

use std::fmt;

use hsmrf::Error as CoreError;
use serde_json::{json, Value};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
    pub detail: Value,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            kind: "io",
            message: format!("{context}: {err}"),
            detail: Value::Null,
        }
    }

    /// Input files that cannot be read are a data problem, not a runtime one.
    pub fn input(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            kind: "input",
            message: format!("{context}: {err}"),
            detail: Value::Null,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind, "message": self.message });
        if let Value::Object(extra) = &self.detail {
            err.as_object_mut().expect("object").extend(extra.clone());
        }
        json!({ "error": err, "exit_code": self.code })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        let (code, kind, detail) = match &e {
            CoreError::MissingDate(label) => (EXIT_USAGE, "missing_date", json!({ "label": label })),
            CoreError::InconsistentDate { label, tree_age, date } => (
                EXIT_USAGE,
                "inconsistent_date",
                json!({ "label": label, "tree_age": tree_age, "date": date }),
            ),
            CoreError::Newick { position, .. } => (EXIT_USAGE, "newick", json!({ "position": position })),
            CoreError::InvalidGenealogy(_) => (EXIT_USAGE, "invalid_genealogy", Value::Null),
            CoreError::InvalidGrid(_) => (EXIT_USAGE, "invalid_grid", Value::Null),
            CoreError::InvalidArgument(_) => (EXIT_USAGE, "invalid_argument", Value::Null),
            CoreError::DimensionMismatch { expected, actual } => (
                EXIT_USAGE,
                "dimension_mismatch",
                json!({ "expected": expected, "actual": actual }),
            ),
            CoreError::DegenerateSkyline => (EXIT_USAGE, "degenerate_skyline", Value::Null),
            CoreError::Sampler(_) => (EXIT_RUNTIME, "sampler", Value::Null),
            CoreError::Simulation(_) => (EXIT_RUNTIME, "simulation", Value::Null),
        };
        CliError {
            code,
            kind,
            message,
            detail,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

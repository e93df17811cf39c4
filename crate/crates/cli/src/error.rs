use std::path::PathBuf;

use jne_core::Error as CoreError;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("column {0} not found in input header")]
    MissingColumn(String),

    #[error("confounder column {0} has zero variance")]
    ConstantConfounder(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 configuration, 3 infeasible, 4 data, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Parse { .. }
            | CliError::MissingColumn(_)
            | CliError::ConstantConfounder(_)
            | CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::EmptyGrid => 2,
                CoreError::InfeasibleColumn { .. } | CoreError::AllInfeasible => 3,
                CoreError::IterationLimit(_) | CoreError::Numerical(_) | CoreError::TooLargeForOracle(_) => 1,
                _ => 4,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "Config",
            CliError::Parse { .. } => "ParseError",
            CliError::MissingColumn(_) => "MissingColumn",
            CliError::ConstantConfounder(_) => "ConstantConfounder",
            CliError::Io { .. } => "Io",
            CliError::Core(e) => match e {
                CoreError::DimensionMismatch(_) => "DimensionMismatch",
                CoreError::NonFiniteInput(_) => "NonFiniteInput",
                CoreError::TooFewVariables(_) => "TooFewVariables",
                CoreError::EmptyDataset => "EmptyDataset",
                CoreError::InvalidConfig(_) => "InvalidConfig",
                CoreError::EmptyWindow { .. } => "EmptyWindow",
                CoreError::EmptyGrid => "EmptyGrid",
                CoreError::NoFeasibleBandwidth => "NoFeasibleBandwidth",
                CoreError::IterationLimit(_) => "IterationLimit",
                CoreError::Numerical(_) => "Numerical",
                CoreError::TooLargeForOracle(_) => "TooLargeForOracle",
                CoreError::InfeasibleColumn { .. } => "InfeasibleColumn",
                CoreError::AllInfeasible => "AllInfeasible",
                CoreError::DegenerateRegression => "DegenerateRegression",
                CoreError::NotPositiveDefinite(_) => "NotPositiveDefinite",
                CoreError::NotSymmetric(_) => "NotSymmetric",
                CoreError::TooFewSamples(_) => "TooFewSamples",
            },
        }
    }

    /// Machine-readable form written to standard error.
    pub fn to_json(&self) -> Value {
        let mut out = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Core(CoreError::InfeasibleColumn {
            column,
            lambda,
            violation,
            sample,
        }) = self
        {
            out["column"] = json!(column);
            out["lambda"] = json!(lambda);
            out["violation"] = if violation.is_finite() { json!(violation) } else { Value::Null };
            out["sample"] = json!(sample);
        }
        out
    }
}

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot read config file {path}: {reason}")]
    ConfigLoad { path: String, reason: String },
    #[error("cannot load model {path}: {reason}")]
    ModelLoad { path: String, reason: String },
    #[error("cannot load data {path}: {reason}")]
    DataLoad { path: String, reason: String },
    #[error("cannot load causal model {path}: {reason}")]
    ScmLoad { path: String, reason: String },
    #[error(transparent)]
    Core(#[from] lens_core::Error),
    #[error("cannot write {path}: {reason}")]
    Output { path: String, reason: String },
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ErrorReport<'a> {
    schema_version: u32,
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::InvalidConfig(_) => "InvalidConfig",
            CliError::ConfigLoad { .. } => "ConfigLoad",
            CliError::ModelLoad { .. } => "ModelLoad",
            CliError::DataLoad { .. } => "DataLoad",
            CliError::ScmLoad { .. } => "ScmLoad",
            CliError::Core(e) => e.kind(),
            CliError::Output { .. } => "Output",
        }
    }

    /// 1 for anything caused by the inputs, 2 when the run itself broke.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let report = ErrorReport {
            schema_version: crate::SCHEMA_VERSION,
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
            },
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::InvalidConfig(msg.into())
}

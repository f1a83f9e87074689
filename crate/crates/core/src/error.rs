use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("label column `{0}` not found in header")]
    UnknownLabelColumn(String),
    #[error("feature index {index} out of bounds for {arity} features")]
    IndexOutOfBounds { index: usize, arity: usize },

    #[error("instance has {got} values, model expects {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("external model failure: {0}")]
    ExternalModelFailure(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("context is not enumerable: {0}")]
    NotEnumerable(String),
    #[error("reference pool is empty")]
    EmptyReferencePool,
    #[error("factor has zero support under the context: {0}")]
    ZeroSupport(String),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("structural causal model graph is cyclic")]
    CyclicGraph,
    #[error("invalid structural causal model: {0}")]
    InvalidScm(String),
    #[error("bad intervention assignment: {0}")]
    BadAssignment(String),

    #[error("factor does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("bad cardinality {max} for arity {arity}")]
    BadCardinality { max: usize, arity: usize },
    #[error("value pool is empty")]
    EmptyPool,
    #[error("invalid factor: {0}")]
    InvalidFactor(String),

    #[error("order is not antisymmetric on the factor space")]
    CycleDetected,

    #[error("outcome {0} has zero probability under the context")]
    ZeroOutcomeProbability(u8),
    #[error("bad parameters: {0}")]
    BadParameters(String),

    #[error("exact Shapley values need arity <= {max}, got {arity}")]
    ArityTooLarge { arity: usize, max: usize },
    #[error("anchor does not hold on the input")]
    AnchorDoesNotHold,
    #[error("no factor reaches the sufficiency threshold {0}")]
    NoFeasibleRecourse(f64),
    #[error("model is not a bivariate Boolean SCM: {0}")]
    NotBivariate(String),
    #[error("observation X={x}, Y={y} has zero probability")]
    ZeroConditioningProbability { x: u8, y: u8 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedCsv { .. } => "MalformedCsv",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::InvalidSchema(_) => "InvalidSchema",
            Error::UnknownLabelColumn(_) => "UnknownLabelColumn",
            Error::IndexOutOfBounds { .. } => "IndexOutOfBounds",
            Error::ArityMismatch { .. } => "ArityMismatch",
            Error::ExternalModelFailure(_) => "ExternalModelFailure",
            Error::InvalidModel(_) => "InvalidModel",
            Error::NotEnumerable(_) => "NotEnumerable",
            Error::EmptyReferencePool => "EmptyReferencePool",
            Error::ZeroSupport(_) => "ZeroSupport",
            Error::InvalidContext(_) => "InvalidContext",
            Error::CyclicGraph => "CyclicGraph",
            Error::InvalidScm(_) => "InvalidScm",
            Error::BadAssignment(_) => "BadAssignment",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::BadCardinality { .. } => "BadCardinality",
            Error::EmptyPool => "EmptyPool",
            Error::InvalidFactor(_) => "InvalidFactor",
            Error::CycleDetected => "CycleDetected",
            Error::ZeroOutcomeProbability(_) => "ZeroOutcomeProbability",
            Error::BadParameters(_) => "BadParameters",
            Error::ArityTooLarge { .. } => "ArityTooLarge",
            Error::AnchorDoesNotHold => "AnchorDoesNotHold",
            Error::NoFeasibleRecourse(_) => "NoFeasibleRecourse",
            Error::NotBivariate(_) => "NotBivariate",
            Error::ZeroConditioningProbability { .. } => "ZeroConditioningProbability",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("weights sum to zero")]
    ZeroWeightSum,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("input not normalized: {0}")]
    UnnormalizedInput(String),
    #[error("source sequence too short: {0}")]
    SourceTooShort(String),
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("empty point cloud: {0}")]
    EmptyCloud(String),
    #[error("checkpoint has no trained initialization encoder")]
    UntrainedInitEncoder,
    #[error("requested resolution exceeds source: {0}")]
    ResolutionTooHigh(String),
    #[error("not enough distinct motion kinds or shapes: {0}")]
    InsufficientDiversity(String),
    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaVersionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-parsable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::InvalidRotation(_) => "invalid_rotation",
            Error::EmptyInput(_) => "empty_input",
            Error::ZeroWeightSum => "zero_weight_sum",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::UnnormalizedInput(_) => "unnormalized_input",
            Error::SourceTooShort(_) => "source_too_short",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NonFiniteObjective { .. } => "non_finite_objective",
            Error::EmptyCloud(_) => "empty_cloud",
            Error::UntrainedInitEncoder => "untrained_init_encoder",
            Error::ResolutionTooHigh(_) => "resolution_too_high",
            Error::InsufficientDiversity(_) => "insufficient_diversity",
            Error::Parse { .. } => "parse_error",
            Error::SchemaVersionMismatch(_) => "schema_version_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io { .. } => "io_error",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(source_name: impl Into<String>, e: serde_json::Error) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

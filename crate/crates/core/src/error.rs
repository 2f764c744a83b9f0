use crate::model::UserId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("update #{step} drives frequency of user {user} to {value}, outside {{0,1}}")]
    NonBinaryFrequency { user: UserId, value: i64, step: u64 },

    #[error("malformed update: {0}")]
    MalformedUpdate(String),

    #[error("tree counter horizon of {0} increments exhausted")]
    HorizonExhausted(u64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("query {query} is not supported by estimator `{estimator}`")]
    UnsupportedQuery { estimator: &'static str, query: String },

    #[error("user {0} is not a heavy user")]
    NotHeavy(UserId),

    #[error("player {player} disqualified: {reason}")]
    Disqualified { player: usize, reason: String },

    #[error("cannot decode answer {0}")]
    Decode(u32),

    #[error("estimator `{name}` violates accuracy class {class}: {detail}")]
    AccuracyClass {
        name: String,
        class: &'static str,
        detail: String,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable kind, used in CLI error JSON and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParam { .. } => "invalid_param",
            Error::NonBinaryFrequency { .. } => "non_binary_frequency",
            Error::MalformedUpdate(_) => "malformed_update",
            Error::HorizonExhausted(_) => "horizon_exhausted",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Snapshot(_) => "snapshot",
            Error::UnsupportedQuery { .. } => "unsupported_query",
            Error::NotHeavy(_) => "not_heavy",
            Error::Disqualified { .. } => "disqualified",
            Error::Decode(_) => "decode",
            Error::AccuracyClass { .. } => "accuracy_class",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

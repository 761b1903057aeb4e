use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("tokenization error: {0}")]
    Tokenize(String),

    #[error("vocabulary is empty")]
    EmptyVocab,

    #[error("position {position} exceeds the maximum of {max}")]
    Range { position: usize, max: usize },

    #[error("day {got} arrived after day {last}")]
    Sequencing { last: u32, got: u32 },

    #[error("scoring failed for line {line_id}: {msg}")]
    Scoring { line_id: u64, msg: String },

    #[error("AUC is undefined without both positive and negative labels")]
    UndefinedAuc,

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

/// Coarse failure classes, used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::TomlDe(_) | Error::TomlSer(_) => ErrorClass::Usage,
            Error::NonFinite(_) | Error::Scoring { .. } | Error::UndefinedAuc => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index { .. } => "index",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Tokenize(_) => "tokenize",
            Error::EmptyVocab => "empty_vocab",
            Error::Range { .. } => "range",
            Error::Sequencing { .. } => "sequencing",
            Error::Scoring { .. } => "scoring",
            Error::UndefinedAuc => "undefined_auc",
            Error::Lookup(_) => "lookup",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
        }
    }
}

/// An I/O error whose message names the file.
pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point parameters: {0}")]
    InvalidParams(String),
    #[error("value {value} outside representable range (|x| < {limit})")]
    Overflow { value: f64, limit: f64 },
    #[error("shares belong to the same party ({0}); need one share from each party")]
    PartyMismatch(u8),
    #[error("beaver triple {0} consumed twice")]
    TripleReuse(u64),
    #[error("dealer tape exhausted: {0}")]
    TapeExhausted(&'static str),
    #[error("channel endpoint closed")]
    ChannelClosed,
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unsupported manifest version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model validation failed: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("protocol deadlock: both parties waiting on an empty channel")]
    Deadlock,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("trace `{trace}`: {message}")]
    InvalidTrace { trace: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("symbol {symbol} out of range for an alphabet of {n_symbols}")]
    SymbolOutOfRange { symbol: usize, n_symbols: usize },

    #[error("observation sequence has zero probability under the model")]
    ImpossibleObservation,

    #[error("unsupported model file version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("unknown gesture template `{0}`")]
    UnknownTemplate(String),

    #[error("{0} requires an error model")]
    MissingErrorModel(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

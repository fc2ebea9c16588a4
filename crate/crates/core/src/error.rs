use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("bit vector length {len} is not a multiple of {bits_per_symbol}")]
    BitLength { len: usize, bits_per_symbol: usize },

    #[error("channel delay {delay} exceeds prefix length {l_cpp}")]
    DelayExceedsPrefix { delay: usize, l_cpp: usize },

    #[error("singular matrix (pivot ratio {0:.3e})")]
    Singular(f64),

    #[error("exhaustive search over {0} candidates exceeds the 2^20 limit")]
    SearchTooLarge(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

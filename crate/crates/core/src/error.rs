use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("training error at step {step}: {msg}")]
    Training { step: u64, msg: String },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Malformed configuration or taxonomy text.
    #[error("configuration error at line {line}: {message}")]
    Config { line: usize, message: String },
    /// A value violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// Caller passed inputs that do not fit together (shapes, sources).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Non-finite values surfaced during computation.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Input outside the domain of a statistic (empty corpus, constant vector).
    #[error("domain error: {0}")]
    Domain(String),
    /// The synthetic generator cannot satisfy its configuration.
    #[error("generation error: {0}")]
    Generation(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

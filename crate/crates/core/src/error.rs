use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (shapes, ranges, non-finite values).
    #[error("invalid input: {0}")]
    Input(String),
    /// An axis has edges but every weight on it is zero.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    /// An iterate became non-finite.
    #[error("numerical divergence in {stage}: {detail}")]
    Divergence { stage: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

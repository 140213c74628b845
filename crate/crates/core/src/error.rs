use thiserror::Error;

use crate::trainer::RunRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported nonlinearity: {0}")]
    UnsupportedNonlinearity(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {diagnostic}")]
    Diverged {
        epoch: usize,
        diagnostic: String,
        record: Box<RunRecord>,
    },
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i]))),
        None => Ok(()),
    }
}

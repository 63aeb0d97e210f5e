use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall into two families, see [`Error::is_numeric`]: input that
/// violates a contract, and numerical failures on otherwise valid input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("graph is disconnected: kernel would have |lambda_2| = 1")]
    Disconnected,
    #[error("kernel is not reversible: max |pi_i P_ij - pi_j P_ji| = {max_violation:e}")]
    NotReversible { max_violation: f64 },
    #[error("second eigenvalue has modulus {modulus} >= 1 (disconnected or periodic chain)")]
    NoSpectralGap { modulus: f64 },
    #[error("dense decomposition refused: {n} states exceeds the cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoSpectralGap { .. } | Error::Numeric(_) | Error::TooLarge { .. }
        )
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

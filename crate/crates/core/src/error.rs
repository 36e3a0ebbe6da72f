//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix failed the symmetry check.
    #[error("matrix is not symmetric: max asymmetry {max_asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric { max_asymmetry: f64, tolerance: f64 },

    /// A matrix failed the positive-semidefiniteness check.
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e} below {tolerance:.3e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    /// A block that must be inverted is numerically singular.
    #[error("block is numerically singular: min eigenvalue {min_eigenvalue:.3e}")]
    SingularBlock { min_eigenvalue: f64 },

    /// An estimator was given fewer samples than it needs.
    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    /// The two parties' announcement-covariance estimates disagree beyond
    /// statistical tolerance, which signals desynchronized announcement logs.
    #[error("announcement covariance estimates disagree: {max_sigma:.2} combined standard errors")]
    IncompatibleVz { max_sigma: f64 },

    /// The relay announcement covariance is (near-)singular, so no finite
    /// displacement gains exist.
    #[error("relay announcement is degenerate: det of announcement covariance = {det:.3e}")]
    DegenerateAnnouncement { det: f64 },

    /// An unrecognized relay strategy tag.
    #[error("unknown relay strategy `{0}` (expected honest, announce_noise, or rescaled:<k>)")]
    UnknownStrategy(String),

    /// Inputs with incompatible shapes or lengths.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter outside its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// A malformed configuration file or CLI value.
    #[error("invalid config: {0}")]
    Config(String),

    /// An empty parameter grid where at least one point is required.
    #[error("empty grid: {0}")]
    EmptyGrid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation errors, 2 for
    /// numerical/data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSymmetric { .. }
            | Error::NotPsd { .. }
            | Error::SingularBlock { .. }
            | Error::IncompatibleVz { .. }
            | Error::DegenerateAnnouncement { .. } => 2,
            Error::TooFewSamples { .. }
            | Error::UnknownStrategy(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::EmptyGrid(_)
            | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

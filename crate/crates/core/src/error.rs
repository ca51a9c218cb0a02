//! Error type shared across the engine.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum AblError {
    /// A configuration key is missing, malformed, or out of range.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The wall-model root selection produced no usable friction velocity
    /// (flow too stable for the similarity closure).
    #[error("no stable wall-model solution: {0}")]
    NoStableSolution(String),

    /// The time step required for stability fell below the configured floor.
    #[error("CFL violation at t={t:.3} s: stable dt {required:.3e} s < dt_min {dt_min:.3e} s")]
    CflViolation { required: f64, dt_min: f64, t: f64 },

    /// The Poisson right-hand side violates the Neumann compatibility
    /// condition (its volume integral must vanish).
    #[error("incompatible Poisson rhs: |mean| {mean:.3e} exceeds tolerance {tol:.3e}")]
    IncompatibleRhs { mean: f64, tol: f64 },

    /// Checkpoint file is unreadable or structurally invalid.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Checkpoint was written by an incompatible format version.
    #[error("checkpoint version mismatch: file has v{found}, this build reads v{expected}")]
    VersionMismatch { found: u32, expected: u32 },

    /// An internal numerical consistency check failed (indicates a bug,
    /// not a user error).
    #[error("numerics: {0}")]
    Numerics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AblError {
    /// Convenience constructor for configuration errors.
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        AblError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

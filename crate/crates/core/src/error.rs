use thiserror::Error;

/// Errors raised by the diffusion, sketch, and denoiser layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value fell outside the domain of a function, e.g. `log 0` on a
    /// simplex boundary.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("timestep {t} outside [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("sketch holds {count} primitives, capacity is {capacity}")]
    Capacity { count: usize, capacity: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("impossible arc: |2 kappa| = {diameter} is shorter than chord {chord}")]
    ImpossibleArc { diameter: f64, chord: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

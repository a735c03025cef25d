use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An iterative kernel stopped before reaching its tolerance.
    #[error("{what} did not converge (residual {residual:.3e})")]
    NotConverged { what: &'static str, residual: f64 },

    /// Explicit time step above the stability bound.
    #[error("time step {step:.3e} exceeds stability bound {bound:.3e}")]
    StepTooLarge { step: f64, bound: f64 },

    #[error("negative density {value:.3e} after explicit step")]
    NegativeDensity { value: f64 },

    #[error("time step underflow ({step:.3e}) at t = {time}")]
    StepUnderflow { step: f64, time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGeometry(_)
                | Error::Dimension(_)
                | Error::InvalidMeasure(_)
                | Error::InvalidParameter(_)
                | Error::Io(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

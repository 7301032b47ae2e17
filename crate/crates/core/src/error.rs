use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("grid mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported family: {0}")]
    Family(String),

    #[error("empty sample")]
    EmptySample,

    #[error("support mask is empty for threshold {tau}")]
    EmptyMask { tau: f64 },

    #[error("division by vanishing eps1 at {count} masked grid points")]
    VanishingDenominator { count: usize },

    #[error("bandwidth {bandwidth} leaves {cells} grid cells without neighbours")]
    Bandwidth { bandwidth: f64, cells: usize },

    #[error("inverse transform is not real: sup |imag| = {imag:.3e}, sup |real| = {real:.3e}")]
    NotReal { imag: f64, real: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad configuration or input rather than by numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Grid(_)
                | Error::SpecMismatch(_)
                | Error::Input(_)
                | Error::Family(_)
                | Error::EmptySample
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

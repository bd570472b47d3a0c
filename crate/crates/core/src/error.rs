use thiserror::Error;

use crate::simulate::PhaseState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// `H + λI` (or a block built from it) has a null direction.
    #[error("singular {context}: null direction {null_direction:?}")]
    Singular {
        context: String,
        null_direction: Vec<f64>,
    },

    #[error("divergence at step {step}")]
    Diverged {
        step: usize,
        last_finite: Box<PhaseState>,
    },

    /// The noise covariance does not commute with the Hessian, so the two
    /// do not share a common eigenbasis and the modes do not decouple.
    #[error("model error: {0}")]
    Model(String),

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

use crate::model::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time index {t} outside configured range 1..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("regressor matrix is rank deficient (rank {rank}, need {needed}); estimation phase too short or not exciting")]
    RankDeficient { rank: usize, needed: usize },

    #[error("horizon M={horizon} is below the threshold M_min={min_horizon} required by alpha_lo/alpha_hi")]
    HorizonTooShort { horizon: usize, min_horizon: usize },

    #[error("invalid constant: {0}")]
    InvalidConstant(String),

    #[error("state norm {norm:e} exceeded ceiling {ceiling:e} at t={t}")]
    Diverged {
        t: usize,
        norm: f64,
        ceiling: f64,
        partial: Box<Trajectory>,
    },

    #[error("estimation failed at t={t}: {source}")]
    Estimation {
        t: usize,
        #[source]
        source: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("greedy-adversarial disturbance requires a state context")]
    MissingContext,

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("{check} cannot be checked on a {controller} trajectory")]
    CheckMismatch {
        check: &'static str,
        controller: &'static str,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Trajectory recorded before the failure, if the error carries one.
    pub fn partial_trajectory(&self) -> Option<&Trajectory> {
        match self {
            Error::Diverged { partial, .. } | Error::Estimation { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

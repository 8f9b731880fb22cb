use std::path::PathBuf;

use thiserror::Error;

use crate::scene::VehicleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("timestep must be positive and finite, got {0}")]
    NonPositiveTimestep(f64),

    #[error("control horizon must be at least 1 step, got {0}")]
    HorizonTooShort(usize),

    #[error("lateral position {lateral} m at timestep {timestep} lies outside every lane")]
    OutOfRoad { lateral: f64, timestep: usize },

    #[error("vehicle {vehicle} has {observed} observed timesteps, at least {required} required")]
    InsufficientObservations {
        vehicle: VehicleId,
        observed: usize,
        required: usize,
    },

    #[error("leader {0} has no usable state in the observation window")]
    MissingLeader(VehicleId),

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("no viable component: every log marginal is -inf or NaN")]
    NoViableComponent,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that stem from ill-conditioned numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::NoViableComponent)
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Multi-modal trajectory prediction for highway vehicles.
//!
//! Each hypothesis pairs a target lane, an optional leader to follow, and a
//! merge duration with minimum-norm kinematic controllers. Kalman filtering
//! scores every hypothesis by the evidence of the observed track, and the
//! resulting mixture is sampled into weighted future trajectories.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod config;
pub mod data_io;
pub mod error;
pub mod gaussian;
pub mod inference;
pub mod kalman;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod sensing;
pub mod synth;

pub use config::{RunConfig, View};
pub use error::{Error, Result};
pub use inference::{predict, ComponentSummary, PredictionSet, PredictorConfig, WeightedTrajectory};
pub use kinematics::{min_norm_control, AxisState, StepMatrices};
pub use metrics::{ade, qde, rmse, EvalRecord};
pub use scene::{CandidatePair, Lane, LaneId, Position, Scene, Track, VehicleId};
pub use sensing::{driver_view, SensorConfig};

//! Batch prediction over many scenes with per-scene error isolation.

use log::{debug, warn};
use rayon::prelude::*;

use crate::config::{RunConfig, View};
use crate::data_io::Source;
use crate::error::{Error, Result};
use crate::inference::{predict, scene_seed, PredictionSet};
use crate::scene::Scene;
use crate::sensing::{driver_view, nearest_ego};

/// Result of predicting one scene.
#[derive(Debug)]
pub enum Outcome {
    Predicted(PredictionSet),
    /// The scene cannot be evaluated under the configured view.
    Skipped(String),
    Failed(Error),
}

/// Applies the configured view and interaction setting to a scene.
///
/// In the driver view the sensing vehicle is the surrounding vehicle nearest
/// the target at the end of the observation window; scenes without one, or
/// whose target stays visible for less than the minimum duration, are skipped.
pub fn prepare_scene(scene: &Scene, config: &RunConfig) -> Result<std::result::Result<Scene, String>> {
    let mut prepared = scene.clone();
    if config.view == View::Driver {
        let Some(ego) = nearest_ego(scene) else {
            return Ok(Err("no surrounding vehicle can act as the sensing vehicle".into()));
        };
        prepared = driver_view(scene, ego, &config.sensor)?;
        let visible = prepared.target.observed_steps().filter(|&t| t <= scene.n).count();
        let required = config.sensor.min_frames(scene.dt).max(2);
        if visible < required {
            return Ok(Err(format!(
                "target visible for {visible} of {} frames from vehicle {ego}",
                scene.n
            )));
        }
    }
    if !config.interaction {
        prepared = prepared.without_interactions();
    }
    Ok(Ok(prepared))
}

/// Predicts every scene, in parallel, with seeds derived from the scene's
/// position in `scenes`. Results are returned in input order.
pub fn predict_batch(scenes: &[Scene], config: &RunConfig, source: Option<Source>) -> Vec<Outcome> {
    let predictor = config.predictor(source);
    scenes
        .par_iter()
        .enumerate()
        .map(|(index, scene)| {
            let prepared = match prepare_scene(scene, config) {
                Ok(Ok(s)) => s,
                Ok(Err(reason)) => {
                    debug!("scene {}: skipped: {reason}", scene.id);
                    return Outcome::Skipped(reason);
                }
                Err(e) => return Outcome::Failed(e),
            };
            match predict(&prepared, &predictor, scene_seed(config.seed, index as u64)) {
                Ok(set) => Outcome::Predicted(set),
                Err(e) => {
                    warn!("scene {}: {e}", scene.id);
                    Outcome::Failed(e)
                }
            }
        })
        .collect()
}

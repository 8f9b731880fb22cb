//! Run configuration: every model, sensing, and windowing parameter with its
//! default, loadable from and writable to JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::{NgsimOptions, Source, WindowSpec};
use crate::error::{Error, Result};
use crate::inference::{merge_grid, PredictorConfig};
use crate::scene::FieldOfView;
use crate::sensing::SensorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// Full observation of every vehicle.
    #[default]
    Bird,
    /// Observations limited by sensing range and occlusion from an ego vehicle.
    Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub obs_s: f64,
    pub pred_s: f64,
    pub stride_s: f64,
    pub neighbor_radius: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            obs_s: 3.0,
            pred_s: 5.0,
            stride_s: 5.0,
            neighbor_radius: 150.0,
        }
    }
}

impl WindowConfig {
    pub fn spec(&self, dt: f64) -> WindowSpec {
        WindowSpec {
            neighbor_radius: self.neighbor_radius,
            ..WindowSpec::from_seconds(dt, self.obs_s, self.pred_s, self.stride_s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub merge_max_s: f64,
    pub merge_step_s: f64,
    /// Lane-keeping control horizon, timesteps.
    pub keep_horizon: usize,
    /// Car-following control horizon, timesteps.
    pub follow_horizon: usize,
    /// A merge falls back to lane keeping once its remaining horizon is at
    /// most this many steps. Zero finishes every merge exactly.
    pub switch_margin: usize,
    pub sigma_p: f64,
    pub sigma_g: f64,
    pub sigma_v: f64,
    pub sigma_lat: f64,
    pub sigma_lon: f64,
    /// Longitudinal process noise used for NGSIM recordings.
    pub sigma_lon_ngsim: f64,
    pub fov_forward: f64,
    pub fov_rear: f64,
    pub obs_std: f64,
    pub init_position_std: f64,
    pub init_velocity_std: f64,
    pub smoother_velocity_prior_std: f64,
    pub samples_per_component: usize,
    pub include_noise: bool,
    pub clamp_leader: bool,
    pub qde_q: f64,
    pub seed: u64,
    pub view: View,
    /// When false, surrounding vehicles are ignored.
    pub interaction: bool,
    pub sensor: SensorConfig,
    pub windows: WindowConfig,
    pub ngsim: NgsimOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PredictorConfig::default();
        Self {
            dt: p.dt,
            merge_max_s: 12.0,
            merge_step_s: 0.5,
            keep_horizon: p.keep_horizon,
            follow_horizon: p.follow_horizon,
            switch_margin: p.switch_margin,
            sigma_p: p.sigma_p,
            sigma_g: p.sigma_g,
            sigma_v: p.sigma_v,
            sigma_lat: p.sigma_lat,
            sigma_lon: p.sigma_lon,
            sigma_lon_ngsim: 0.2,
            fov_forward: p.fov.forward,
            fov_rear: p.fov.rear,
            obs_std: p.obs_std,
            init_position_std: p.init_position_std,
            init_velocity_std: p.init_velocity_std,
            smoother_velocity_prior_std: p.smoother_velocity_prior_std,
            samples_per_component: p.samples_per_component,
            include_noise: p.include_noise,
            clamp_leader: p.clamp_leader,
            qde_q: 0.2,
            seed: 0,
            view: View::Bird,
            interaction: true,
            sensor: SensorConfig::default(),
            windows: WindowConfig::default(),
            ngsim: NgsimOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.merge_step_s > 0.0 && self.merge_max_s >= 0.0 && self.merge_max_s.is_finite()) {
            return bad(format!(
                "merge grid needs step > 0 and max ≥ 0, got step {} max {}",
                self.merge_step_s, self.merge_max_s
            ));
        }
        if !(self.sigma_lon_ngsim >= 0.0 && self.sigma_lon_ngsim.is_finite()) {
            return bad(format!("sigma_lon_ngsim must be non-negative, got {}", self.sigma_lon_ngsim));
        }
        if !(self.qde_q > 0.0 && self.qde_q <= 1.0) {
            return bad(format!("qde_q must lie in (0, 1], got {}", self.qde_q));
        }
        let w = &self.windows;
        if !([w.obs_s, w.pred_s, w.stride_s, w.neighbor_radius].iter().all(|v| *v > 0.0 && v.is_finite())) {
            return bad(format!("window parameters must be positive: {w:?}"));
        }
        if (w.obs_s / self.dt).round() < 2.0 {
            return bad("observation window must span at least two timesteps".into());
        }
        if !(self.ngsim.frame_rate > 0.0) {
            return bad(format!("NGSIM frame rate must be positive, got {}", self.ngsim.frame_rate));
        }
        self.sensor.validate()?;
        self.predictor(None).validate()
    }

    /// Predictor settings for a recording source; NGSIM uses its own
    /// longitudinal process noise.
    pub fn predictor(&self, source: Option<Source>) -> PredictorConfig {
        let sigma_lon = match source {
            Some(Source::Ngsim) => self.sigma_lon_ngsim,
            _ => self.sigma_lon,
        };
        PredictorConfig {
            dt: self.dt,
            merge_steps: merge_grid(self.dt, self.merge_max_s, self.merge_step_s),
            keep_horizon: self.keep_horizon,
            follow_horizon: self.follow_horizon,
            switch_margin: self.switch_margin,
            sigma_p: self.sigma_p,
            sigma_g: self.sigma_g,
            sigma_v: self.sigma_v,
            sigma_lat: self.sigma_lat,
            sigma_lon,
            obs_std: self.obs_std,
            init_position_std: self.init_position_std,
            init_velocity_std: self.init_velocity_std,
            smoother_velocity_prior_std: self.smoother_velocity_prior_std,
            fov: FieldOfView {
                forward: self.fov_forward,
                rear: self.fov_rear,
            },
            samples_per_component: self.samples_per_component,
            include_noise: self.include_noise,
            clamp_leader: self.clamp_leader,
        }
    }
}

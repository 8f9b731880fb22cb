//! Driver-view degradation of scene observations and constant-velocity
//! smoothing of partially observed tracks.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{AxisState, StepMatrices};
use crate::scene::{Axis, Position, Scene, Track, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Two-sided longitudinal sensing range, meters.
    pub range_lon: f64,
    pub obstacle_radius: f64,
    /// Minimum total observed time for a surrounding vehicle to be kept.
    pub min_obs_s: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            range_lon: 50.0,
            obstacle_radius: 2.0,
            min_obs_s: 1.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.range_lon, self.obstacle_radius, self.min_obs_s]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("sensor parameters must be positive: {self:?}")))
        }
    }

    pub fn min_frames(&self, dt: f64) -> usize {
        (self.min_obs_s / dt).round() as usize
    }
}

fn segment_distance(a: Position, b: Position, p: Position) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(&Position::new(a.lon + s * dx, a.lat + s * dy))
}

/// True iff the sight line `ego → subject` passes strictly within `radius`
/// of an obstacle center.
pub fn occluded(ego: Position, subject: Position, obstacles: &[Position], radius: f64) -> bool {
    obstacles
        .iter()
        .any(|o| segment_distance(ego, subject, *o) < radius)
}

/// Observations available to vehicle `ego` acting as the sensing vehicle.
///
/// Every other track keeps an observation only if it lies within the
/// longitudinal range of the ego and no third vehicle blocks the sight line.
/// Surrounding vehicles observed for less than `min_obs_s` are dropped; the
/// target is kept with whatever mask survives.
pub fn driver_view(scene: &Scene, ego: VehicleId, config: &SensorConfig) -> Result<Scene> {
    let ego_track = scene
        .track(ego)
        .ok_or_else(|| Error::InvalidArgument(format!("ego vehicle {ego} not in scene")))?;
    let ego_positions = (1..=scene.n)
        .map(|t| {
            ego_track.position(t).ok_or_else(|| {
                Error::InvalidArgument(format!("ego vehicle {ego} missing at timestep {t}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let all: Vec<&Track> = std::iter::once(&scene.target).chain(&scene.others).collect();
    let visible = |subject: &Track, t: usize| -> bool {
        let (Some(p), e) = (subject.position(t), ego_positions[t - 1]) else {
            return false;
        };
        if (p.lon - e.lon).abs() > config.range_lon {
            return false;
        }
        let obstacles: Vec<Position> = all
            .iter()
            .filter(|o| o.id != ego && o.id != subject.id)
            .filter_map(|o| o.position(t))
            .collect();
        !occluded(e, p, &obstacles, config.obstacle_radius)
    };
    let degrade = |track: &Track| -> Track {
        let mut out = track.clone();
        if track.id != ego {
            for t in track.observed_steps().collect::<Vec<_>>() {
                if !visible(track, t) {
                    out.set_observed(t, false);
                }
            }
        }
        out
    };

    let min_frames = config.min_frames(scene.dt);
    let target = degrade(&scene.target);
    let others = scene
        .others
        .iter()
        .map(degrade)
        .filter(|t| t.id == ego || t.observed_count() >= min_frames)
        .collect();
    Ok(Scene {
        target,
        others,
        ..scene.clone()
    })
}

/// Surrounding vehicle closest to the target at `n` among those known over
/// the whole observation window.
pub fn nearest_ego(scene: &Scene) -> Option<VehicleId> {
    let target = scene.target.position(scene.n)?;
    scene
        .others
        .iter()
        .filter(|o| (1..=scene.n).all(|t| o.position(t).is_some()))
        .map(|o| (o.position(scene.n).unwrap().distance(&target), o.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Noise levels for the constant-velocity smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherNoise {
    /// Std of the per-step velocity disturbance.
    pub process_std: f64,
    pub obs_std: f64,
    /// Std of the zero-mean velocity prior at the first observation.
    pub velocity_prior_std: f64,
}

/// Fixed-interval smoothing of a masked scalar sequence under zero-input
/// double-integrator dynamics. Returns a state for every timestep
/// `1..=observations.len()`; timesteps before the first observation are
/// extrapolated backward at the smoothed velocity.
pub fn smooth_axis_cv(observations: &[Option<f64>], dt: f64, noise: &SmootherNoise) -> Result<Vec<AxisState>> {
    let mats = StepMatrices::new(dt)?;
    let a = *mats.a();
    let first = observations
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| Error::InvalidArgument("cannot smooth a track with no observations".into()))?;
    let r = noise.obs_std * noise.obs_std;
    let q = Matrix2::new(0.0, 0.0, 0.0, noise.process_std * noise.process_std);

    let len = observations.len();
    let mut filtered: Vec<(Vector2<f64>, Matrix2<f64>)> = Vec::with_capacity(len - first);
    let mut predicted: Vec<(Vector2<f64>, Matrix2<f64>)> = Vec::with_capacity(len - first);
    let v0 = noise.velocity_prior_std * noise.velocity_prior_std;
    filtered.push((
        Vector2::new(observations[first].unwrap(), 0.0),
        Matrix2::new(r, 0.0, 0.0, v0),
    ));
    predicted.push(filtered[0]);
    for obs in &observations[first + 1..] {
        let (m, p) = filtered.last().unwrap();
        let mp = a * m;
        let pp = a * p * a.transpose() + q;
        predicted.push((mp, pp));
        let next = match obs {
            Some(y) => {
                let s = pp[(0, 0)] + r;
                if !(s > 0.0) {
                    return Err(Error::Numerical("smoother innovation variance is not positive".into()));
                }
                let k = pp.column(0) / s;
                let mu = mp + k * (y - mp[0]);
                let pu = pp - k * pp.row(0);
                (mu, (pu + pu.transpose()) * 0.5)
            }
            None => (mp, pp),
        };
        filtered.push(next);
    }

    let mut smoothed = vec![Vector2::zeros(); filtered.len()];
    *smoothed.last_mut().unwrap() = filtered.last().unwrap().0;
    for i in (0..filtered.len() - 1).rev() {
        let (mf, pf) = filtered[i];
        let (mp, pp) = predicted[i + 1];
        let pinv = pp
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular predicted covariance in smoother".into()))?;
        let gain = pf * a.transpose() * pinv;
        smoothed[i] = mf + gain * (smoothed[i + 1] - mp);
    }

    let anchor = AxisState::from_vector(smoothed[0]);
    let mut out: Vec<AxisState> = (0..first)
        .map(|i| {
            let back = (first - i) as f64 * dt;
            AxisState::new(anchor.position - back * anchor.velocity, anchor.velocity)
        })
        .collect();
    out.extend(smoothed.into_iter().map(AxisState::from_vector));
    Ok(out)
}

/// Smoothed states of both axes over timesteps `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrack {
    pub lon: Vec<AxisState>,
    pub lat: Vec<AxisState>,
}

pub fn smooth_track_cv(track: &Track, n: usize, dt: f64, noise: &SmootherNoise) -> Result<SmoothedTrack> {
    Ok(SmoothedTrack {
        lon: smooth_axis_cv(&track.observed_axis(n, Axis::Longitudinal), dt, noise)?,
        lat: smooth_axis_cv(&track.observed_axis(n, Axis::Lateral), dt, noise)?,
    })
}

//! Bayesian model averaging over (lane, leader, merge duration) components.
//!
//! Every component gets its own pair of augmented linear-Gaussian systems.
//! Kalman filtering yields the posterior over `θ = (x(n), g*, v*, p_m)` and
//! the evidence of the observed target positions; samples of `θ` are rolled
//! forward through the nonlinear (velocity-clamped) dynamics and weighted by
//! the normalized evidence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{
    build_lat_system, build_lon_system, initial_state, priors_from_observations, AugmentedSystem,
    LateralModel, LongitudinalModel,
};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianBelief, GaussianSampler};
pub use crate::kalman::{kalman_filter, FilterOutput};
use crate::kinematics::{AxisState, GainTable, StepMatrices};
use crate::scene::{candidate_set, Axis, CandidatePair, FieldOfView, LaneId, Position, Scene, VehicleId};
use crate::sensing::{smooth_axis_cv, SmootherNoise};

/// Numeric settings of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub dt: f64,
    /// Merge durations (steps remaining at timestep 1) with a uniform prior.
    pub merge_steps: Vec<usize>,
    pub keep_horizon: usize,
    pub follow_horizon: usize,
    pub switch_margin: usize,
    pub sigma_p: f64,
    pub sigma_g: f64,
    pub sigma_v: f64,
    pub sigma_lat: f64,
    pub sigma_lon: f64,
    pub obs_std: f64,
    pub init_position_std: f64,
    pub init_velocity_std: f64,
    pub smoother_velocity_prior_std: f64,
    pub fov: FieldOfView,
    pub samples_per_component: usize,
    pub include_noise: bool,
    pub clamp_leader: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            merge_steps: merge_grid(0.1, 12.0, 0.5),
            keep_horizon: 100,
            follow_horizon: 100,
            switch_margin: 0,
            sigma_p: 1.5,
            sigma_g: 2.0,
            sigma_v: 2.0,
            sigma_lat: 0.05,
            sigma_lon: 0.05,
            obs_std: 0.05,
            init_position_std: 0.05,
            init_velocity_std: 2.0,
            smoother_velocity_prior_std: 10.0,
            fov: FieldOfView::default(),
            samples_per_component: 4,
            include_noise: true,
            clamp_leader: false,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let positive = [
            ("sigma_p", self.sigma_p),
            ("sigma_g", self.sigma_g),
            ("sigma_v", self.sigma_v),
            ("obs_std", self.obs_std),
            ("init_position_std", self.init_position_std),
            ("init_velocity_std", self.init_velocity_std),
            ("smoother_velocity_prior_std", self.smoother_velocity_prior_std),
        ];
        let non_negative = [("sigma_lat", self.sigma_lat), ("sigma_lon", self.sigma_lon)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.merge_steps.is_empty() {
            return bad("merge duration grid is empty".into());
        }
        if self.keep_horizon < 1 || self.follow_horizon < 1 {
            return bad("control horizons must be at least one step".into());
        }
        if !(self.fov.forward >= 0.0 && self.fov.rear >= 0.0) {
            return bad(format!("field of view must be non-negative: {:?}", self.fov));
        }
        if self.samples_per_component == 0 {
            return bad("samples per component must be positive".into());
        }
        Ok(())
    }
}

/// Grid `0, step, …, max` seconds converted to whole timesteps.
pub fn merge_grid(dt: f64, max_s: f64, step_s: f64) -> Vec<usize> {
    let count = (max_s / step_s + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|i| (i as f64 * step_s / dt).round() as usize)
        .collect()
}

/// One `(lane, leader, merge duration)` hypothesis and its filtering systems.
#[derive(Debug, Clone)]
pub struct ComponentModel {
    pub pair: CandidatePair,
    pub merge_steps: usize,
    pub lon_model: LongitudinalModel,
    pub lat_model: LateralModel,
    pub lon_system: AugmentedSystem,
    pub lat_system: AugmentedSystem,
    /// Smoothed leader state at `n`, the start of its constant-velocity rollout.
    pub leader_at_n: Option<AxisState>,
}

/// Log-space normalization of component evidences.
pub fn component_weights(log_marginals: &[f64]) -> Result<Vec<f64>> {
    if log_marginals.iter().any(|l| l.is_nan()) {
        return Err(Error::NoViableComponent);
    }
    let max = log_marginals
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NoViableComponent);
    }
    let raw: Vec<f64> = log_marginals.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// A draw of `θ`: `lon = (p₁, v₁, g*, v*)`, `lat = (p₂, v₂, p_m)` at timestep `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub lon: [f64; 4],
    pub lat: [f64; 3],
}

impl Theta {
    pub fn from_means(lon: &GaussianBelief, lat: &GaussianBelief) -> Self {
        Self {
            lon: std::array::from_fn(|i| lon.mean[i]),
            lat: std::array::from_fn(|i| lat.mean[i]),
        }
    }
}

/// Samplers for the two axis posteriors, which are independent given the component.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    lon: GaussianSampler,
    lat: GaussianSampler,
}

impl ThetaSampler {
    pub fn new(lon: &GaussianBelief, lat: &GaussianBelief) -> Result<Self> {
        Ok(Self {
            lon: lon.sampler()?,
            lat: lat.sampler()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let lon = self.lon.sample(rng);
        let lat = self.lat.sample(rng);
        Theta {
            lon: std::array::from_fn(|i| lon[i]),
            lat: std::array::from_fn(|i| lat[i]),
        }
    }
}

pub fn sample_theta<R: Rng + ?Sized>(
    lon: &GaussianBelief,
    lat: &GaussianBelief,
    rng: &mut R,
) -> Result<Theta> {
    Ok(ThetaSampler::new(lon, lat)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub include_noise: bool,
    pub clamp_leader: bool,
}

/// Forward-simulates `theta` from `n` to `horizon` under the component's
/// control laws; returns positions at `n+1..=horizon`.
///
/// Negative longitudinal velocities are set to zero before every step, so
/// per-step longitudinal displacement is never negative.
pub fn propagate<R: Rng + ?Sized>(
    theta: &Theta,
    component: &ComponentModel,
    gains: &GainTable,
    n: usize,
    horizon: usize,
    rng: &mut R,
    options: RolloutOptions,
) -> Result<Vec<Position>> {
    let mats = gains.mats();
    let [p1, v1, gap, speed] = theta.lon;
    let [p2, v2, p_m] = theta.lat;
    let mut lon = AxisState::new(p1, v1.max(0.0));
    let mut lat = AxisState::new(p2, v2);
    let mut leader = component.leader_at_n;
    let noise = |rng: &mut R, sigma: f64| {
        if options.include_noise {
            sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    };

    let mut out = Vec::with_capacity(horizon.saturating_sub(n));
    for t in n..horizon {
        let u_lon = component.lon_model.control(lon, gap, speed, leader, gains)?;
        let u_lat = component.lat_model.control(lat, p_m, t - 1, gains)?;
        let e_lon = noise(rng, component.lon_model.sigma_lon);
        let e_lat = noise(rng, component.lat_model.sigma_lat);
        lon = mats.step(lon, u_lon + e_lon);
        lon.velocity = lon.velocity.max(0.0);
        lat = mats.step(lat, u_lat + e_lat);
        if let Some(l) = leader.as_mut() {
            *l = mats.step(*l, 0.0);
            if options.clamp_leader {
                l.velocity = l.velocity.max(0.0);
            }
        }
        out.push(Position::new(lon.position, lat.position));
    }
    Ok(out)
}

/// Evidence-weighted summary of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub lane: LaneId,
    pub leader: Option<VehicleId>,
    pub k_seconds: f64,
    pub log_marginal: f64,
    pub weight: f64,
}

impl ComponentSummary {
    pub fn pair(&self) -> CandidatePair {
        CandidatePair {
            lane: self.lane,
            leader: self.leader,
        }
    }
}

/// Filtering outputs kept for diagnostics; not serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPosterior {
    pub merge_steps: usize,
    pub lon: FilterOutput,
    pub lat: FilterOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory {
    pub weight: f64,
    pub component: Option<usize>,
    /// Timestep of `positions[0]`.
    pub first_step: usize,
    pub positions: Vec<Position>,
}

impl WeightedTrajectory {
    pub fn at(&self, t: usize) -> Option<Position> {
        t.checked_sub(self.first_step)
            .and_then(|i| self.positions.get(i))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "doc::PredictionDoc", into = "doc::PredictionDoc")]
pub struct PredictionSet {
    pub components: Vec<ComponentSummary>,
    pub samples: Vec<WeightedTrajectory>,
    pub posteriors: Vec<ComponentPosterior>,
}

impl PredictionSet {
    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// Weighted mean position at timestep `t`.
    pub fn mean_at(&self, t: usize) -> Option<Position> {
        let mut acc = (0.0, 0.0, 0.0);
        for s in &self.samples {
            let p = s.at(t)?;
            acc = (acc.0 + s.weight * p.lon, acc.1 + s.weight * p.lat, acc.2 + s.weight);
        }
        (acc.2 > 0.0).then(|| Position::new(acc.0 / acc.2, acc.1 / acc.2))
    }
}

/// Per-scene seed derived from a run-level seed.
pub fn scene_seed(master: u64, scene_index: u64) -> u64 {
    splitmix64(master ^ splitmix64(scene_index.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for component `index` of a scene.
pub fn component_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Shared per-scene inputs for building components.
pub struct ScenePlan<'a> {
    pub scene: &'a Scene,
    pub config: &'a PredictorConfig,
    pub gains: GainTable,
    pub pairs: Vec<CandidatePair>,
    leaders: BTreeMap<VehicleId, Vec<AxisState>>,
    lon_obs: Vec<Option<f64>>,
    lat_obs: Vec<Option<f64>>,
}

impl<'a> ScenePlan<'a> {
    pub fn new(scene: &'a Scene, config: &'a PredictorConfig) -> Result<Self> {
        scene.validate()?;
        config.validate()?;
        if (scene.dt - config.dt).abs() > 1e-9 * config.dt {
            return Err(Error::InvalidArgument(format!(
                "scene timestep {} differs from model timestep {}",
                scene.dt, config.dt
            )));
        }
        let mats = StepMatrices::new(config.dt)?;
        let longest = config
            .merge_steps
            .iter()
            .copied()
            .chain([config.keep_horizon, config.follow_horizon])
            .max()
            .unwrap_or(1);
        let gains = GainTable::new(mats, longest);
        let pairs = candidate_set(scene, &config.fov)?;
        if pairs.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        let noise = SmootherNoise {
            process_std: config.sigma_lon,
            obs_std: config.obs_std,
            velocity_prior_std: config.smoother_velocity_prior_std,
        };
        let mut leaders = BTreeMap::new();
        for j in pairs.iter().filter_map(|p| p.leader) {
            if leaders.contains_key(&j) {
                continue;
            }
            let track = scene.other(j).ok_or(Error::MissingLeader(j))?;
            let obs = track.observed_axis(scene.n, Axis::Longitudinal);
            let states = smooth_axis_cv(&obs, scene.dt, &noise).map_err(|e| match e {
                Error::InvalidArgument(_) => Error::MissingLeader(j),
                other => other,
            })?;
            leaders.insert(j, states);
        }
        Ok(Self {
            scene,
            config,
            gains,
            pairs,
            leaders,
            lon_obs: scene.target.observed_axis(scene.n, Axis::Longitudinal),
            lat_obs: scene.target.observed_axis(scene.n, Axis::Lateral),
        })
    }

    /// Components in deterministic order: pairs outer, merge durations inner.
    pub fn component_keys(&self) -> Vec<(CandidatePair, usize)> {
        self.pairs
            .iter()
            .flat_map(|p| self.config.merge_steps.iter().map(move |k| (*p, *k)))
            .collect()
    }

    pub fn build_component(&self, pair: CandidatePair, merge_steps: usize) -> Result<ComponentModel> {
        let cfg = self.config;
        let scene = self.scene;
        let n = scene.n;
        let lane = scene.lane(pair.lane).expect("candidate lanes exist");
        let leader = pair.leader.map(|j| self.leaders[&j].as_slice());
        let priors = priors_from_observations(
            &scene.target,
            n,
            scene.dt,
            lane.center,
            leader.map(|l| l[n - 1].position),
            cfg.sigma_g,
            cfg.sigma_v,
            cfg.sigma_p,
        )?;
        let lon_init = initial_state(
            &scene.target,
            n,
            scene.dt,
            Axis::Longitudinal,
            cfg.init_position_std,
            cfg.init_velocity_std,
        )?;
        let lat_init = initial_state(
            &scene.target,
            n,
            scene.dt,
            Axis::Lateral,
            cfg.init_position_std,
            cfg.init_velocity_std,
        )?;
        let lon_model = LongitudinalModel {
            leader: pair.leader,
            horizon_kc: cfg.follow_horizon,
            sigma_g: cfg.sigma_g,
            sigma_v: cfg.sigma_v,
            sigma_lon: cfg.sigma_lon,
        };
        let lat_model = LateralModel {
            lane_center: lane.center,
            merge_steps,
            keep_horizon_ks: cfg.keep_horizon,
            switch_margin: cfg.switch_margin,
            sigma_p: cfg.sigma_p,
            sigma_lat: cfg.sigma_lat,
        };
        let lon_system = build_lon_system(&lon_model, leader, &priors, &lon_init, &self.gains, cfg.obs_std, n)?;
        let lat_system = build_lat_system(&lat_model, &priors, &lat_init, &self.gains, cfg.obs_std, n)?;
        let leader_at_n = leader.map(|l| l[n - 1]);
        Ok(ComponentModel {
            pair,
            merge_steps,
            lon_model,
            lat_model,
            lon_system,
            lat_system,
            leader_at_n,
        })
    }

    pub fn filter(&self, component: &ComponentModel) -> Result<(FilterOutput, FilterOutput)> {
        Ok((
            kalman_filter(&component.lon_system, &self.lon_obs)?,
            kalman_filter(&component.lat_system, &self.lat_obs)?,
        ))
    }
}

struct ComponentRun {
    pair: CandidatePair,
    merge_steps: usize,
    log_marginal: f64,
    lon: FilterOutput,
    lat: FilterOutput,
    trajectories: Vec<Vec<Position>>,
}

/// Samples weighted future trajectories of the scene's target.
///
/// Components are evaluated in parallel; each draws from its own stream
/// derived from `seed`, so the result is identical for any thread count.
pub fn predict(scene: &Scene, config: &PredictorConfig, seed: u64) -> Result<PredictionSet> {
    let plan = ScenePlan::new(scene, config)?;
    let keys = plan.component_keys();
    let options = RolloutOptions {
        include_noise: config.include_noise,
        clamp_leader: config.clamp_leader,
    };
    let runs = keys
        .par_iter()
        .enumerate()
        .map(|(index, (pair, k))| -> Result<ComponentRun> {
            let component = plan.build_component(*pair, *k)?;
            let (lon, lat) = plan.filter(&component)?;
            let sampler = ThetaSampler::new(&lon.posterior, &lat.posterior)?;
            let mut rng = component_rng(seed, index);
            let trajectories = (0..config.samples_per_component)
                .map(|_| {
                    let theta = sampler.sample(&mut rng);
                    propagate(&theta, &component, &plan.gains, scene.n, scene.horizon, &mut rng, options)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ComponentRun {
                pair: *pair,
                merge_steps: *k,
                log_marginal: lon.log_marginal + lat.log_marginal,
                lon,
                lat,
                trajectories,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let log_marginals: Vec<f64> = runs.iter().map(|r| r.log_marginal).collect();
    let weights = component_weights(&log_marginals)?;
    let per_sample = config.samples_per_component.max(1) as f64;

    let mut set = PredictionSet::default();
    for (index, (run, weight)) in runs.into_iter().zip(weights).enumerate() {
        set.components.push(ComponentSummary {
            lane: run.pair.lane,
            leader: run.pair.leader,
            k_seconds: run.merge_steps as f64 * scene.dt,
            log_marginal: run.log_marginal,
            weight,
        });
        set.samples.extend(run.trajectories.into_iter().map(|positions| WeightedTrajectory {
            weight: weight / per_sample,
            component: Some(index),
            first_step: scene.n + 1,
            positions,
        }));
        set.posteriors.push(ComponentPosterior {
            merge_steps: run.merge_steps,
            lon: run.lon,
            lat: run.lat,
        });
    }
    Ok(set)
}

mod doc {
    use super::*;

    #[derive(Serialize, Deserialize)]
    pub struct PointDoc {
        pub t: usize,
        pub x: f64,
        pub y: f64,
    }

    #[derive(Serialize, Deserialize)]
    pub struct SampleDoc {
        pub weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub component: Option<usize>,
        pub points: Vec<PointDoc>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct PredictionDoc {
        pub components: Vec<ComponentSummary>,
        pub samples: Vec<SampleDoc>,
    }

    impl From<PredictionSet> for PredictionDoc {
        fn from(set: PredictionSet) -> Self {
            PredictionDoc {
                components: set.components,
                samples: set
                    .samples
                    .into_iter()
                    .map(|s| SampleDoc {
                        weight: s.weight,
                        component: s.component,
                        points: s
                            .positions
                            .iter()
                            .enumerate()
                            .map(|(i, p)| PointDoc {
                                t: s.first_step + i,
                                x: p.lon,
                                y: p.lat,
                            })
                            .collect(),
                    })
                    .collect(),
            }
        }
    }

    impl TryFrom<PredictionDoc> for PredictionSet {
        type Error = Error;

        fn try_from(doc: PredictionDoc) -> Result<Self> {
            let samples = doc
                .samples
                .into_iter()
                .map(|s| {
                    let first_step = s.points.first().map_or(0, |p| p.t);
                    if s.points.iter().enumerate().any(|(i, p)| p.t != first_step + i) {
                        return Err(Error::InvalidArgument(
                            "sample points must cover consecutive timesteps".into(),
                        ));
                    }
                    Ok(WeightedTrajectory {
                        weight: s.weight,
                        component: s.component,
                        first_step,
                        positions: s.points.iter().map(|p| Position::new(p.x, p.y)).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PredictionSet {
                components: doc.components,
                samples,
                posteriors: Vec::new(),
            })
        }
    }
}

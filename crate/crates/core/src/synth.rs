//! Scene simulator that draws trajectories from the generative model itself:
//! a known (lane, leader, merge duration) component driven by the same
//! control laws, process noise, and observation noise that inference assumes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::behavior::{lat_control, lon_control, lon_control_no_lead};
use crate::error::{Error, Result};
use crate::inference::PredictorConfig;
use crate::kinematics::{AxisState, GainTable, StepMatrices};
use crate::scene::{lanes_from_markings, LaneId, Position, Scene, Track, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub dt: f64,
    pub n: usize,
    pub horizon: usize,
    pub lane_count: usize,
    pub lane_width: f64,
    /// Initial target speed range, m/s.
    pub speed: (f64, f64),
    pub leader_probability: f64,
    /// Probability of an extra vehicle ahead in a lane other than the chosen one.
    pub distractor_probability: f64,
    /// Restrict the chosen lane to a neighbor of the starting lane.
    pub force_lane_change: bool,
    pub merge_steps: Vec<usize>,
    pub keep_horizon: usize,
    pub follow_horizon: usize,
    pub switch_margin: usize,
    pub sigma_g: f64,
    pub sigma_v: f64,
    pub sigma_lat: f64,
    pub sigma_lon: f64,
    pub obs_std: f64,
}

impl SynthOptions {
    pub fn from_predictor(config: &PredictorConfig) -> Self {
        Self {
            dt: config.dt,
            n: 30,
            horizon: 80,
            lane_count: 3,
            lane_width: 3.7,
            speed: (20.0, 30.0),
            leader_probability: 0.5,
            distractor_probability: 0.5,
            force_lane_change: false,
            merge_steps: config.merge_steps.clone(),
            keep_horizon: config.keep_horizon,
            follow_horizon: config.follow_horizon,
            switch_margin: config.switch_margin,
            sigma_g: config.sigma_g,
            sigma_v: config.sigma_v,
            sigma_lat: config.sigma_lat,
            sigma_lon: config.sigma_lon,
            obs_std: config.obs_std,
        }
    }
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self::from_predictor(&PredictorConfig::default())
    }
}

/// The component and parameters a simulated scene was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthTruth {
    pub lane: LaneId,
    pub leader: Option<VehicleId>,
    pub merge_steps: usize,
    pub gap: f64,
    pub speed: f64,
    pub lateral_target: f64,
}

pub const TARGET_ID: VehicleId = VehicleId(1);
pub const LEADER_ID: VehicleId = VehicleId(2);
pub const DISTRACTOR_ID: VehicleId = VehicleId(3);

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

/// Simulates one scene. The target starts at the center of the middle lane;
/// its observations over `1..=n` carry Gaussian noise, while positions over
/// `n+1..=horizon` are the noise-free ground truth of the simulated state.
pub fn simulate_scene<R: Rng + ?Sized>(id: &str, options: &SynthOptions, rng: &mut R) -> Result<(Scene, SynthTruth)> {
    if options.lane_count == 0 || options.merge_steps.is_empty() || options.n < 2 || options.horizon <= options.n {
        return Err(Error::InvalidArgument(format!("degenerate simulation options {options:?}")));
    }
    let mats = StepMatrices::new(options.dt)?;
    let longest = options
        .merge_steps
        .iter()
        .copied()
        .chain([options.keep_horizon, options.follow_horizon])
        .max()
        .unwrap_or(1);
    let gains = GainTable::new(mats, longest);
    let markings: Vec<f64> = (0..=options.lane_count).map(|i| i as f64 * options.lane_width).collect();
    let lanes = lanes_from_markings(&markings, 1);
    let start_index = options.lane_count / 2;
    let start = lanes[start_index].clone();

    let choices: Vec<usize> = if options.force_lane_change && options.lane_count > 1 {
        start.adjacent.iter().map(|l| (l.0 - 1) as usize).collect()
    } else {
        let mut c = vec![start_index];
        c.extend(start.adjacent.iter().map(|l| (l.0 - 1) as usize));
        c
    };
    let chosen = lanes[choices[rng.random_range(0..choices.len())]].clone();
    let merge_steps = options.merge_steps[rng.random_range(0..options.merge_steps.len())];

    let v0 = rng.random_range(options.speed.0..=options.speed.1);
    let dt = options.dt;
    let mut lon = AxisState::new(0.0, v0);
    let mut lat = AxisState::new(start.center, 0.0);

    let with_leader = rng.random_bool(options.leader_probability);
    let leader_start = AxisState::new(rng.random_range(15.0..40.0), v0 + rng.random_range(-2.0..2.0));
    let leader_at = |t: usize| AxisState::new(leader_start.position + (t - 1) as f64 * dt * leader_start.velocity, leader_start.velocity);
    let speed = v0 + normal(options.sigma_v).sample(rng);
    let gap = if with_leader {
        (leader_start.position + normal(options.sigma_g).sample(rng)).max(2.0)
    } else {
        0.0
    };

    let lon_noise = normal(options.sigma_lon);
    let lat_noise = normal(options.sigma_lat);
    let obs_noise = normal(options.obs_std);
    let mut target = Track::new(TARGET_ID);
    for t in 1..=options.horizon {
        let truth = Position::new(lon.position, lat.position);
        if t <= options.n {
            let observed = Position::new(
                truth.lon + obs_noise.sample(rng),
                truth.lat + obs_noise.sample(rng),
            );
            target.set_position(t, observed);
            target.set_observed(t, true);
        } else {
            target.set_position(t, truth);
        }
        let u_lon = if with_leader {
            lon_control(lon, gap, speed, leader_at(t), options.follow_horizon, &gains)?
        } else {
            lon_control_no_lead(lon.velocity, speed, options.follow_horizon)
        };
        let u_lat = lat_control(
            lat,
            chosen.center,
            merge_steps,
            t - 1,
            options.keep_horizon,
            options.switch_margin,
            &gains,
        )?;
        lon = mats.step(lon, u_lon);
        lon.velocity += lon_noise.sample(rng);
        lat = mats.step(lat, u_lat);
        lat.velocity += lat_noise.sample(rng);
    }

    let mut others = Vec::new();
    if with_leader {
        let mut track = Track::new(LEADER_ID);
        for t in 1..=options.n {
            track.set_position(t, Position::new(leader_at(t).position, chosen.center));
            track.set_observed(t, true);
        }
        others.push(track);
    }
    let other_lanes: Vec<&_> = lanes.iter().filter(|l| l.id != chosen.id).collect();
    if !other_lanes.is_empty() && rng.random_bool(options.distractor_probability) {
        let lane = other_lanes[rng.random_range(0..other_lanes.len())];
        let p0 = rng.random_range(10.0..45.0);
        let v = v0 + rng.random_range(-3.0..3.0);
        let mut track = Track::new(DISTRACTOR_ID);
        for t in 1..=options.n {
            track.set_position(t, Position::new(p0 + (t - 1) as f64 * dt * v, lane.center));
            track.set_observed(t, true);
        }
        others.push(track);
    }

    let scene = Scene {
        id: id.to_string(),
        dt,
        n: options.n,
        horizon: options.horizon,
        lanes,
        target,
        others,
    };
    let truth = SynthTruth {
        lane: chosen.id,
        leader: with_leader.then_some(LEADER_ID),
        merge_steps,
        gap,
        speed,
        lateral_target: chosen.center,
    };
    Ok((scene, truth))
}

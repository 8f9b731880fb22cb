//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use lanebma_core::behavior::{
    build_lat_system, build_lon_system, AugmentedSystem, InitialState, LateralModel, LongitudinalModel,
    Normal1, ParameterPriors,
};
use lanebma_core::kinematics::{AxisState, GainTable, StepMatrices};
use lanebma_core::scene::VehicleId;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Least-norm input sequence from the Moore-Penrose pseudo-inverse of the
/// explicitly assembled reachability matrix `[A^{k-1}B, ..., AB, B]`.
pub fn pinv_control(x0: AxisState, xf: AxisState, k: usize, dt: f64) -> DVector<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DVector::from_column_slice(&[0.0, 1.0]);
    let mut c = DMatrix::zeros(2, k);
    let mut power = DMatrix::identity(2, 2);
    for col in (0..k).rev() {
        c.set_column(col, &(&power * &b));
        power = &a * &power;
    }
    // `power` is now A^k.
    let x0v = DVector::from_column_slice(&[x0.position, x0.velocity]);
    let target = DVector::from_column_slice(&[xf.position, xf.velocity]) - power * x0v;
    let pinv = c.pseudo_inverse(1e-14).expect("SVD converges");
    pinv * target
}

/// Applies an input sequence under the noiseless double integrator.
pub fn apply_controls(x0: AxisState, inputs: &[f64], dt: f64) -> AxisState {
    inputs.iter().fold(x0, |x, u| {
        AxisState::new(x.position + dt * x.velocity, x.velocity + u)
    })
}

/// Log evidence and end-of-window posterior by explicit joint-Gaussian
/// marginalization and conditioning.
///
/// Every state is written as an affine map of the base vector
/// `ξ = (z_start, w_start, …, w_{end-1})`, whose covariance is block diagonal.
pub struct JointOracle {
    pub log_marginal: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn joint_gaussian(system: &AugmentedSystem, observations: &[Option<f64>]) -> JointOracle {
    let d = system.dim();
    let steps = system.end - system.start;
    let width = d * (steps + 1);

    let mut xi_mean = DVector::zeros(width);
    xi_mean.rows_mut(0, d).copy_from(&system.prior.mean);
    let mut xi_cov = DMatrix::zeros(width, width);
    xi_cov.view_mut((0, 0), (d, d)).copy_from(&system.prior.covariance);
    for (i, tr) in system.transitions.iter().enumerate() {
        let o = d * (i + 1);
        xi_cov.view_mut((o, o), (d, d)).copy_from(&tr.q);
    }

    let mut phi = DMatrix::zeros(d, width);
    phi.view_mut((0, 0), (d, d)).fill_with_identity();
    let mut offset = DVector::zeros(d);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut offsets = Vec::new();
    let mut ys = Vec::new();
    for t in system.start..=system.end {
        if t > system.start {
            let i = t - 1 - system.start;
            let tr = &system.transitions[i];
            let mut next = &tr.f * &phi;
            let o = d * (i + 1);
            for r in 0..d {
                next[(r, o + r)] += 1.0;
            }
            phi = next;
            offset = &tr.f * &offset + &tr.c;
        }
        if let Some(y) = observations.get(t - 1).copied().flatten() {
            rows.push(phi.transpose() * &system.observation);
            offsets.push(system.observation.dot(&offset));
            ys.push(y);
        }
    }

    let end_mean = &phi * &xi_mean + &offset;
    let end_cov = &phi * &xi_cov * phi.transpose();
    if ys.is_empty() {
        return JointOracle { log_marginal: 0.0, mean: end_mean, covariance: end_cov };
    }
    let m = ys.len();
    let mut obs_map = DMatrix::zeros(m, width);
    for (i, r) in rows.iter().enumerate() {
        obs_map.set_row(i, &r.transpose());
    }
    let y_mean = &obs_map * &xi_mean + DVector::from_vec(offsets);
    let s = &obs_map * &xi_cov * obs_map.transpose() + DMatrix::identity(m, m) * system.obs_variance;
    let residual = DVector::from_vec(ys) - y_mean;
    let chol = s.clone().cholesky().expect("innovation covariance is positive definite");
    let solved = chol.solve(&residual);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_marginal =
        -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + residual.dot(&solved));

    let cross = &phi * &xi_cov * obs_map.transpose();
    let mean = end_mean + &cross * solved;
    let covariance = end_cov - &cross * chol.solve(&cross.transpose());
    JointOracle { log_marginal, mean, covariance }
}

/// Random longitudinal or lateral system over a window of at most 10 steps,
/// with a random observation mask and observations near the prior rollout.
pub fn random_system<R: Rng>(rng: &mut R) -> (AugmentedSystem, Vec<Option<f64>>) {
    let dt = [0.04, 0.1, 1.0][rng.random_range(0..3)];
    let gains = GainTable::new(StepMatrices::new(dt).unwrap(), 130);
    let n = rng.random_range(2..=10);
    let start = rng.random_range(1..=n);
    let init = InitialState {
        timestep: start,
        state: AxisState::new(rng.random_range(-50.0..50.0), rng.random_range(-5.0..30.0)),
        position_std: rng.random_range(0.01..1.0),
        velocity_std: rng.random_range(0.1..3.0),
    };
    let priors = ParameterPriors {
        gap: Normal1 { mean: rng.random_range(5.0..40.0), std: rng.random_range(0.5..3.0) },
        speed: Normal1 { mean: rng.random_range(0.0..35.0), std: rng.random_range(0.5..3.0) },
        lateral_target: Normal1 { mean: rng.random_range(-4.0..8.0), std: rng.random_range(0.5..2.0) },
    };
    let obs_std = rng.random_range(0.01..0.5);
    let system = if rng.random_bool(0.5) {
        let with_leader = rng.random_bool(0.6);
        let model = LongitudinalModel {
            leader: with_leader.then_some(VehicleId(9)),
            horizon_kc: rng.random_range(2..=120),
            sigma_g: priors.gap.std,
            sigma_v: priors.speed.std,
            sigma_lon: rng.random_range(0.0..0.5),
        };
        let p0 = rng.random_range(0.0..80.0);
        let v = rng.random_range(0.0..30.0);
        let leader: Vec<AxisState> = (0..n).map(|i| AxisState::new(p0 + i as f64 * dt * v, v)).collect();
        build_lon_system(&model, with_leader.then_some(&leader[..]), &priors, &init, &gains, obs_std, n).unwrap()
    } else {
        let model = LateralModel {
            lane_center: priors.lateral_target.mean,
            merge_steps: rng.random_range(0..=120),
            keep_horizon_ks: rng.random_range(1..=120),
            switch_margin: rng.random_range(0..=2),
            sigma_p: priors.lateral_target.std,
            sigma_lat: rng.random_range(0.0..0.5),
        };
        build_lat_system(&model, &priors, &init, &gains, obs_std, n).unwrap()
    };
    let means = system.propagate_mean(&system.prior.mean);
    let observations = (1..=n)
        .map(|t| {
            (t >= start && rng.random_bool(0.75))
                .then(|| means[t - start][0] + rng.random_range(-1.0..1.0))
        })
        .collect();
    (system, observations)
}

/// Largest elementwise difference relative to the larger matrix magnitude.
pub fn relative_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1e-300);
    (a - b).amax() / scale
}

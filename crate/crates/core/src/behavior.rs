//! Car-following and lane-change control laws and the augmented
//! linear-Gaussian systems used to filter them.
//!
//! Fixing the merge duration makes both control laws linear in the kinematic
//! state and the unknown setpoints, so appending the setpoints to the state
//! (with identity dynamics) yields a time-varying linear-Gaussian system:
//!
//! ```text
//! longitudinal  z = (p₁, v₁, g*, v*)
//! lateral       w = (p₂, v₂, p_m)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::kinematics::{AxisState, GainTable};
use crate::scene::{Axis, Track, VehicleId};

/// Car-following hypothesis: track `leader` (or drive freely) with horizon `horizon_kc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalModel {
    pub leader: Option<VehicleId>,
    pub horizon_kc: usize,
    pub sigma_g: f64,
    pub sigma_v: f64,
    pub sigma_lon: f64,
}

impl LongitudinalModel {
    /// First input toward the leader-relative target, or the free-driving law
    /// when `leader` is `None`.
    pub fn control(
        &self,
        state: AxisState,
        gap: f64,
        speed: f64,
        leader: Option<AxisState>,
        gains: &GainTable,
    ) -> Result<f64> {
        match leader {
            Some(l) => lon_control(state, gap, speed, l, self.horizon_kc, gains),
            None => Ok(lon_control_no_lead(state.velocity, speed, self.horizon_kc)),
        }
    }
}

/// Lane-change hypothesis: reach `lane_center`-anchored `p_m` after
/// `merge_steps`, then keep the lane with horizon `keep_horizon_ks`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralModel {
    pub lane_center: f64,
    pub merge_steps: usize,
    pub keep_horizon_ks: usize,
    /// Remaining merge horizons at or below this switch to lane keeping.
    pub switch_margin: usize,
    pub sigma_p: f64,
    pub sigma_lat: f64,
}

impl LateralModel {
    pub fn horizon(&self, elapsed: usize) -> usize {
        lat_horizon(self.merge_steps, elapsed, self.keep_horizon_ks, self.switch_margin)
    }

    pub fn control(&self, state: AxisState, p_m: f64, elapsed: usize, gains: &GainTable) -> Result<f64> {
        let target = AxisState::new(p_m, 0.0);
        Ok(gains.get(self.horizon(elapsed))?.first_input(state, target))
    }
}

/// Car-following input: steer toward `gap` behind where a constant-speed
/// leader will be after `kc` steps, at speed `speed`.
pub fn lon_control(
    state: AxisState,
    gap: f64,
    speed: f64,
    leader: AxisState,
    kc: usize,
    gains: &GainTable,
) -> Result<f64> {
    let dt = gains.mats().dt();
    let target = AxisState::new(leader.position + kc as f64 * dt * leader.velocity - gap, speed);
    Ok(gains.get(kc)?.first_input(state, target))
}

pub fn lon_control_no_lead(velocity: f64, speed: f64, kf: usize) -> f64 {
    (speed - velocity) / kf.max(1) as f64
}

/// Controller horizon after `elapsed` steps of a merge lasting `k` steps.
///
/// While more than `margin` merge steps remain the horizon counts down to the
/// merge end; afterwards it is the lane-keeping horizon `ks`.
pub fn lat_horizon(k: usize, elapsed: usize, ks: usize, margin: usize) -> usize {
    match k.checked_sub(elapsed) {
        Some(remaining) if remaining > margin && remaining > 0 => remaining,
        _ => ks,
    }
}

pub fn lat_control(
    state: AxisState,
    p_m: f64,
    k: usize,
    elapsed: usize,
    ks: usize,
    margin: usize,
    gains: &GainTable,
) -> Result<f64> {
    let target = AxisState::new(p_m, 0.0);
    Ok(gains.get(lat_horizon(k, elapsed, ks, margin))?.first_input(state, target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub std: f64,
}

/// Prior means and spreads of the unknown setpoints `(g*, v*, p_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterPriors {
    pub gap: Normal1,
    pub speed: Normal1,
    pub lateral_target: Normal1,
}

/// Last two observed timesteps of a track up to `n`.
fn last_two_observed(track: &Track, n: usize) -> Result<(usize, usize)> {
    let steps: Vec<usize> = track.observed_steps().filter(|&t| t <= n).collect();
    match steps.as_slice() {
        [.., a, b] => Ok((*a, *b)),
        _ => Err(Error::InsufficientObservations {
            vehicle: track.id,
            observed: steps.len(),
            required: 2,
        }),
    }
}

fn finite_difference(track: &Track, a: usize, b: usize, dt: f64, axis: Axis) -> f64 {
    let pa = axis.of(&track.position(a).unwrap());
    let pb = axis.of(&track.position(b).unwrap());
    (pb - pa) / ((b - a) as f64 * dt)
}

/// Data-anchored priors for the setpoints.
///
/// `v*` is centered on the finite-difference speed over the last two observed
/// timesteps, `g*` on the leader's distance ahead at `n` (the target's own
/// position at `n` is extrapolated at that speed when unobserved), and `p_m`
/// on the lane center.
#[allow(clippy::too_many_arguments)]
pub fn priors_from_observations(
    target: &Track,
    n: usize,
    dt: f64,
    lane_center: f64,
    leader_position_at_n: Option<f64>,
    sigma_g: f64,
    sigma_v: f64,
    sigma_p: f64,
) -> Result<ParameterPriors> {
    let (a, b) = last_two_observed(target, n)?;
    let speed = finite_difference(target, a, b, dt, Axis::Longitudinal);
    let own_at_n = target.position(b).unwrap().lon + (n - b) as f64 * dt * speed;
    let gap = leader_position_at_n.map_or(0.0, |lead| lead - own_at_n);
    Ok(ParameterPriors {
        gap: Normal1 { mean: gap, std: sigma_g },
        speed: Normal1 { mean: speed, std: sigma_v },
        lateral_target: Normal1 {
            mean: lane_center,
            std: sigma_p,
        },
    })
}

/// Kinematic part of the initial belief for one axis: first observation and
/// the finite-difference velocity to the next observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub timestep: usize,
    pub state: AxisState,
    pub position_std: f64,
    pub velocity_std: f64,
}

pub fn initial_state(
    target: &Track,
    n: usize,
    dt: f64,
    axis: Axis,
    position_std: f64,
    velocity_std: f64,
) -> Result<InitialState> {
    let mut steps = target.observed_steps().filter(|&t| t <= n);
    let (Some(a), Some(b)) = (steps.next(), steps.next()) else {
        return Err(Error::InsufficientObservations {
            vehicle: target.id,
            observed: target.observed_count(),
            required: 2,
        });
    };
    Ok(InitialState {
        timestep: a,
        state: AxisState::new(
            axis.of(&target.position(a).unwrap()),
            finite_difference(target, a, b, dt, axis),
        ),
        position_std,
        velocity_std,
    })
}

/// One step `z(t+1) = F z(t) + c + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// Time-varying linear-Gaussian system over timesteps `start..=end` with a
/// scalar position observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub start: usize,
    pub end: usize,
    /// `transitions[i]` maps timestep `start + i` to `start + i + 1`.
    pub transitions: Vec<Transition>,
    pub observation: DVector<f64>,
    pub obs_variance: f64,
    pub prior: GaussianBelief,
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Noiseless rollout from `z` at `start`; element `i` is the state at `start + i`.
    pub fn propagate_mean(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.transitions.len() + 1);
        out.push(z.clone());
        for tr in &self.transitions {
            let next = &tr.f * out.last().unwrap() + &tr.c;
            out.push(next);
        }
        out
    }
}

fn velocity_noise(dim: usize, sigma: f64) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(dim, dim);
    q[(1, 1)] = sigma * sigma;
    q
}

fn position_selector(dim: usize) -> DVector<f64> {
    let mut h = DVector::zeros(dim);
    h[0] = 1.0;
    h
}

/// Longitudinal system over `z = (p₁, v₁, g*, v*)`.
///
/// `leader` holds the leader's (smoothed) state at timesteps `1..=n`, index
/// `t - 1`; it is required exactly when the model has a leader.
pub fn build_lon_system(
    model: &LongitudinalModel,
    leader: Option<&[AxisState]>,
    priors: &ParameterPriors,
    init: &InitialState,
    gains: &GainTable,
    obs_std: f64,
    n: usize,
) -> Result<AugmentedSystem> {
    let dt = gains.mats().dt();
    let start = init.timestep;
    if start > n {
        return Err(Error::InvalidArgument(format!("window start {start} beyond n={n}")));
    }
    if model.leader.is_some() != leader.is_some() {
        return Err(Error::InvalidArgument(
            "leader states must be given exactly for car-following models".into(),
        ));
    }
    if let Some(states) = leader {
        if states.len() < n.saturating_sub(1) {
            return Err(Error::InvalidArgument(format!(
                "leader covers {} timesteps, window needs {}",
                states.len(),
                n - 1
            )));
        }
    }

    let kc = model.horizon_kc;
    let g = gains.get(kc)?;
    let mut base = DMatrix::<f64>::identity(4, 4);
    base[(0, 1)] = dt;
    match leader {
        Some(_) => {
            base[(1, 0)] = g.state[0];
            base[(1, 1)] = 1.0 + g.state[1];
            base[(1, 2)] = -g.target[0];
            base[(1, 3)] = g.target[1];
        }
        None => {
            let inv = 1.0 / kc.max(1) as f64;
            base[(1, 1)] = 1.0 - inv;
            base[(1, 3)] = inv;
        }
    }
    let q = velocity_noise(4, model.sigma_lon);
    let transitions = (start..n)
        .map(|t| {
            let mut c = DVector::zeros(4);
            if let Some(states) = leader {
                let l = states[t - 1];
                c[1] = g.target[0] * (l.position + kc as f64 * dt * l.velocity);
            }
            Transition {
                f: base.clone(),
                c,
                q: q.clone(),
            }
        })
        .collect();

    let prior = GaussianBelief::diagonal(
        &[init.state.position, init.state.velocity, priors.gap.mean, priors.speed.mean],
        &[init.position_std, init.velocity_std, priors.gap.std, priors.speed.std],
    );
    Ok(AugmentedSystem {
        start,
        end: n,
        transitions,
        observation: position_selector(4),
        obs_variance: obs_std * obs_std,
        prior,
    })
}

/// Lateral system over `w = (p₂, v₂, p_m)`. Merge time is counted from
/// timestep 1, so the transition out of timestep `t` uses `elapsed = t - 1`.
pub fn build_lat_system(
    model: &LateralModel,
    priors: &ParameterPriors,
    init: &InitialState,
    gains: &GainTable,
    obs_std: f64,
    n: usize,
) -> Result<AugmentedSystem> {
    let dt = gains.mats().dt();
    let start = init.timestep;
    if start > n {
        return Err(Error::InvalidArgument(format!("window start {start} beyond n={n}")));
    }
    let q = velocity_noise(3, model.sigma_lat);
    let transitions = (start..n)
        .map(|t| {
            let g = gains.get(model.horizon(t - 1))?;
            let mut f = DMatrix::<f64>::identity(3, 3);
            f[(0, 1)] = dt;
            f[(1, 0)] = g.state[0];
            f[(1, 1)] = 1.0 + g.state[1];
            f[(1, 2)] = g.target[0];
            Ok(Transition {
                f,
                c: DVector::zeros(3),
                q: q.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prior = GaussianBelief::diagonal(
        &[init.state.position, init.state.velocity, priors.lateral_target.mean],
        &[init.position_std, init.velocity_std, priors.lateral_target.std],
    );
    Ok(AugmentedSystem {
        start,
        end: n,
        transitions,
        observation: position_selector(3),
        obs_variance: obs_std * obs_std,
        prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::StepMatrices;
    use crate::scene::Position;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table() -> GainTable {
        GainTable::new(StepMatrices::new(0.1).unwrap(), 130)
    }

    fn init(p: f64, v: f64) -> InitialState {
        InitialState {
            timestep: 1,
            state: AxisState::new(p, v),
            position_std: 0.05,
            velocity_std: 2.0,
        }
    }

    fn priors(gap: f64, speed: f64, pm: f64) -> ParameterPriors {
        ParameterPriors {
            gap: Normal1 { mean: gap, std: 2.0 },
            speed: Normal1 { mean: speed, std: 2.0 },
            lateral_target: Normal1 { mean: pm, std: 1.5 },
        }
    }

    fn lon_model(leader: Option<u64>) -> LongitudinalModel {
        LongitudinalModel {
            leader: leader.map(VehicleId),
            horizon_kc: 100,
            sigma_g: 2.0,
            sigma_v: 2.0,
            sigma_lon: 0.05,
        }
    }

    fn lat_model(k: usize, margin: usize) -> LateralModel {
        LateralModel {
            lane_center: 3.5,
            merge_steps: k,
            keep_horizon_ks: 100,
            switch_margin: margin,
            sigma_p: 1.5,
            sigma_lat: 0.05,
        }
    }

    #[test]
    fn equilibrium_following_needs_no_input() {
        let g = table();
        for kc in [2, 10, 100] {
            let u = lon_control(AxisState::new(0.0, 10.0), 20.0, 10.0, AxisState::new(20.0, 10.0), kc, &g)
                .unwrap();
            assert!(u.abs() < 1e-12, "kc={kc} u={u}");
        }
        let close = lon_control(AxisState::new(0.0, 10.0), 20.0, 10.0, AxisState::new(10.0, 10.0), 100, &g)
            .unwrap();
        assert!(close < 0.0);
    }

    #[test]
    fn lon_control_is_linear_in_setpoints() {
        let g = table();
        let x = AxisState::new(0.0, 10.0);
        let l = AxisState::new(20.0, 10.0);
        let base = lon_control(x, 20.0, 10.0, l, 100, &g).unwrap();
        let once = lon_control(x, 21.0, 10.5, l, 100, &g).unwrap() - base;
        let twice = lon_control(x, 22.0, 11.0, l, 100, &g).unwrap() - base;
        assert_relative_eq!(twice, 2.0 * once, epsilon = 1e-12);
    }

    #[test]
    fn free_driving_law() {
        assert_eq!(lon_control_no_lead(12.0, 12.0, 100), 0.0);
        assert_relative_eq!(lon_control_no_lead(0.0, 10.0, 100), 0.1);
        assert_eq!(lon_control_no_lead(3.0, 7.0, 10), -lon_control_no_lead(7.0, 3.0, 10));
    }

    #[test]
    fn lateral_horizon_rule() {
        assert_eq!(lat_horizon(50, 10, 100, 0), 40);
        assert_eq!(lat_horizon(10, 8, 100, 0), 2);
        assert_eq!(lat_horizon(10, 9, 100, 0), 1);
        assert_eq!(lat_horizon(10, 10, 100, 0), 100);
        assert_eq!(lat_horizon(0, 0, 100, 0), 100);
        // Margin 2 switches once the countdown reaches 2.
        assert_eq!(lat_horizon(50, 10, 100, 2), 40);
        assert_eq!(lat_horizon(10, 8, 100, 2), 100);
        assert_eq!(lat_horizon(10, 7, 100, 2), 3);
    }

    #[test]
    fn lateral_control_cases() {
        let g = table();
        for k in [0, 5, 40] {
            for t in [0, 3, 50] {
                let u = lat_control(AxisState::new(3.5, 0.0), 3.5, k, t, 100, 0, &g).unwrap();
                assert!(u.abs() < 1e-12);
            }
        }
        let u = lat_control(AxisState::new(0.0, 0.0), 3.5, 40, 0, 100, 0, &g).unwrap();
        assert!(u > 0.0);
        let x = AxisState::new(1.0, 0.3);
        let late = lat_control(x, 3.5, 40, 45, 100, 0, &g).unwrap();
        let keep = lat_control(x, 3.5, 0, 0, 100, 0, &g).unwrap();
        assert_eq!(late, keep);
    }

    #[test]
    fn priors_follow_observations() {
        let pts: Vec<Position> = (0..30).map(|i| Position::new(70.0 + i as f64, 1.0)).collect();
        let track = Track::from_positions(VehicleId(1), &pts, 30);
        // p₁(30) = 99 → place the leader 30 m ahead of 100 m target.
        let p = priors_from_observations(&track, 30, 0.1, 3.5, Some(129.0), 2.0, 2.0, 1.5).unwrap();
        assert_relative_eq!(p.gap.mean, 30.0, epsilon = 1e-12);
        assert_relative_eq!(p.speed.mean, 10.0, epsilon = 1e-9);
        assert_eq!(p.lateral_target, Normal1 { mean: 3.5, std: 1.5 });

        let still = Track::from_positions(VehicleId(2), &[Position::new(5.0, 0.0); 4], 4);
        let p = priors_from_observations(&still, 4, 0.1, 0.0, None, 2.0, 2.0, 1.5).unwrap();
        assert_eq!(p.speed.mean, 0.0);

        let one = Track::from_positions(VehicleId(3), &[Position::new(5.0, 0.0)], 1);
        assert!(priors_from_observations(&one, 1, 0.1, 0.0, None, 2.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn no_lead_system_keeps_cruise() {
        let g = table();
        let sys = build_lon_system(&lon_model(None), None, &priors(0.0, 15.0, 0.0), &init(0.0, 15.0), &g, 0.05, 30)
            .unwrap();
        for tr in &sys.transitions {
            assert_eq!(tr.f.view((2, 2), (2, 2)).clone_owned(), DMatrix::identity(2, 2));
            assert_relative_eq!(tr.f[(1, 1)], 1.0 - 0.01);
            assert_relative_eq!(tr.f[(1, 3)], 0.01);
        }
        let path = sys.propagate_mean(&sys.prior.mean);
        for (i, z) in path.iter().enumerate() {
            assert_relative_eq!(z[0], 15.0 * 0.1 * i as f64, epsilon = 1e-9);
            assert_relative_eq!(z[1], 15.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn merge_system_completes_lane_change() {
        let g = table();
        let model = lat_model(40, 0);
        let sys = build_lat_system(&model, &priors(0.0, 0.0, 3.5), &init(0.0, 0.0), &g, 0.05, 80).unwrap();
        let path = sys.propagate_mean(&sys.prior.mean);
        for tr in &sys.transitions {
            assert_eq!(tr.f.row(2).clone_owned(), nalgebra::RowDVector::from_row_slice(&[0.0, 0.0, 1.0]));
        }
        // Timestep 1 + 40 is the end of the merge.
        for z in &path[40..] {
            assert!((z[0] - 3.5).abs() <= 1e-6, "{}", z[0]);
            assert!(z[1].abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_merge_is_lane_keeping() {
        let g = table();
        let merge = build_lat_system(&lat_model(0, 0), &priors(0.0, 0.0, 3.5), &init(0.0, 0.2), &g, 0.05, 30)
            .unwrap();
        let keep = g.get(100).unwrap();
        for tr in &merge.transitions {
            assert_eq!(tr.f[(1, 0)], keep.state[0]);
            assert_eq!(tr.f[(1, 1)], 1.0 + keep.state[1]);
            assert_eq!(tr.f[(1, 2)], keep.target[0]);
        }
    }

    #[test]
    fn rejects_inconsistent_leader() {
        let g = table();
        let short = vec![AxisState::default(); 5];
        let p = priors(20.0, 10.0, 0.0);
        assert!(build_lon_system(&lon_model(Some(3)), Some(&short), &p, &init(0.0, 10.0), &g, 0.05, 30).is_err());
        assert!(build_lon_system(&lon_model(Some(3)), None, &p, &init(0.0, 10.0), &g, 0.05, 30).is_err());
    }

    proptest! {
        #[test]
        fn lon_system_matches_direct_control(
            p0 in -5.0..5.0f64, v0 in 0.0..30.0f64,
            gap in 5.0..60.0f64, speed in 0.0..30.0f64,
            lp in 10.0..80.0f64, lv in 0.0..30.0f64,
            with_leader in any::<bool>(),
        ) {
            let g = table();
            let n = 30;
            let leader: Vec<AxisState> = (0..n).map(|i| AxisState::new(lp + lv * 0.1 * i as f64, lv)).collect();
            let model = lon_model(with_leader.then_some(5));
            let sys = build_lon_system(
                &model,
                with_leader.then_some(leader.as_slice()),
                &priors(gap, speed, 0.0),
                &init(p0, v0),
                &g,
                0.05,
                n,
            ).unwrap();
            let path = sys.propagate_mean(&sys.prior.mean);
            let mut x = AxisState::new(p0, v0);
            for t in 1..n {
                let l = with_leader.then(|| leader[t - 1]);
                let u = model.control(x, gap, speed, l, &g).unwrap();
                x = g.mats().step(x, u);
                let z = &path[t];
                let scale = 1.0 + x.position.abs() + x.velocity.abs();
                prop_assert!((z[0] - x.position).abs() <= 1e-9 * scale);
                prop_assert!((z[1] - x.velocity).abs() <= 1e-9 * scale);
                prop_assert_eq!(z[2], gap);
                prop_assert_eq!(z[3], speed);
            }
        }

        #[test]
        fn lat_system_matches_direct_control(
            p0 in -2.0..6.0f64, v0 in -1.0..1.0f64,
            pm in -2.0..8.0f64, k in 0usize..=120, margin in 0usize..=2,
        ) {
            let g = table();
            let n = 60;
            let model = LateralModel { switch_margin: margin, ..lat_model(k, margin) };
            let sys = build_lat_system(&model, &priors(0.0, 0.0, pm), &init(p0, v0), &g, 0.05, n).unwrap();
            let path = sys.propagate_mean(&sys.prior.mean);
            let mut x = AxisState::new(p0, v0);
            for (t, z) in path.iter().enumerate().take(n).skip(1) {
                let u = model.control(x, pm, t - 1, &g).unwrap();
                x = g.mats().step(x, u);
                prop_assert!((z[0] - x.position).abs() <= 1e-9 * (1.0 + x.position.abs()));
                prop_assert!((z[1] - x.velocity).abs() <= 1e-9 * (1.0 + x.velocity.abs()));
                prop_assert_eq!(z[2], pm);
            }
        }

        #[test]
        fn following_equilibrium_holds_gap(gap in 5.0..60.0f64, speed in 0.0..35.0f64) {
            let g = table();
            let n = 50;
            let leader: Vec<AxisState> = (0..n).map(|i| AxisState::new(gap + speed * 0.1 * i as f64, speed)).collect();
            let sys = build_lon_system(
                &lon_model(Some(1)), Some(&leader), &priors(gap, speed, 0.0), &init(0.0, speed), &g, 0.05, n,
            ).unwrap();
            let path = sys.propagate_mean(&sys.prior.mean);
            for (i, z) in path.iter().enumerate() {
                prop_assert!((leader[i].position - z[0] - gap).abs() <= 1e-9 * (1.0 + gap + speed));
            }
        }
    }
}

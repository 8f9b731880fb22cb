//! Discrete double-integrator dynamics and minimum-norm finite-horizon control.
//!
//! Both axes of the vehicle model share the same per-step dynamics
//!
//! ```text
//! x(t+1) = A x(t) + B (u(t) + ε(t)),   A = [[1, dt], [0, 1]],   B = [0, 1]ᵀ
//! ```
//!
//! and both control laws pick the first input of the least-squared-norm input
//! sequence that reaches a terminal state after `k` steps. For the double
//! integrator the reachability Gramian is a closed-form 2×2 matrix, so the
//! solve is explicit.

use nalgebra::{Matrix2, RowVector2, Vector2};

use crate::error::{Error, Result};

/// Per-step transition matrices of the double integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMatrices {
    dt: f64,
    a: Matrix2<f64>,
    b: Vector2<f64>,
}

impl StepMatrices {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonPositiveTimestep(dt));
        }
        Ok(Self {
            dt,
            a: Matrix2::new(1.0, dt, 0.0, 1.0),
            b: Vector2::new(0.0, 1.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Vector2<f64> {
        &self.b
    }

    /// `A^k`, which for the double integrator is `[[1, k dt], [0, 1]]`.
    pub fn a_pow(&self, k: usize) -> Matrix2<f64> {
        Matrix2::new(1.0, k as f64 * self.dt, 0.0, 1.0)
    }

    /// One noiseless step under input `u`.
    pub fn step(&self, x: AxisState, u: f64) -> AxisState {
        AxisState::from_vector(self.a * x.to_vector() + self.b * u)
    }
}

/// Convenience constructor mirroring [`StepMatrices::new`].
pub fn step_matrices(dt: f64) -> Result<StepMatrices> {
    StepMatrices::new(dt)
}

/// Position and velocity along one road axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct AxisState {
    pub position: f64,
    pub velocity: f64,
}

impl AxisState {
    pub const fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.position, self.velocity)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

/// Sums `Σ m` and `Σ m²` over `m = 0..k`.
fn power_sums(k: usize) -> (f64, f64) {
    let k = k as f64;
    let s1 = k * (k - 1.0) / 2.0;
    let s2 = (k - 1.0) * k * (2.0 * k - 1.0) / 6.0;
    (s1, s2)
}

/// Inverse of the reachability Gramian `C Cᵀ` for `k ≥ 2`, with
/// `C = [A^{k-1}B, …, AB, B]`. Column `A^m B` is `(m dt, 1)`.
fn gramian_inverse(k: usize, dt: f64) -> Matrix2<f64> {
    debug_assert!(k >= 2);
    let (s1, s2) = power_sums(k);
    let w00 = dt * dt * s2;
    let w01 = dt * s1;
    let w11 = k as f64;
    let det = w00 * w11 - w01 * w01;
    // det = dt² k² (k² - 1) / 12, strictly positive for k ≥ 2.
    let scale = (w00 + w11) * (w00 + w11);
    assert!(
        det > 1e-14 * scale,
        "reachability Gramian is singular (k = {k}, dt = {dt})"
    );
    Matrix2::new(w11, -w01, -w01, w00) / det
}

/// Least-norm input sequence of length `k` steering `x0` to `xf`.
///
/// For `k ≥ 2` the terminal constraint is met exactly. A single-step horizon
/// cannot place both position and velocity, so `k = 1` returns the
/// pseudo-inverse solution, which matches the terminal velocity; it reaches
/// `xf` exactly whenever `xf` is reachable in one step.
pub fn min_norm_control(
    x0: AxisState,
    xf: AxisState,
    k: usize,
    mats: &StepMatrices,
) -> Result<Vec<f64>> {
    match k {
        0 => Err(Error::HorizonTooShort(k)),
        1 => Ok(vec![xf.velocity - x0.velocity]),
        _ => {
            let dt = mats.dt();
            let residual = xf.to_vector() - mats.a_pow(k) * x0.to_vector();
            let lambda = gramian_inverse(k, dt) * residual;
            Ok((0..k)
                .map(|i| lambda[0] * (k - 1 - i) as f64 * dt + lambda[1])
                .collect())
        }
    }
}

/// Linear map from `(x0, xf)` to the first minimum-norm input:
/// `u_0 = state · x0 + target · xf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub state: RowVector2<f64>,
    pub target: RowVector2<f64>,
}

impl ControlGains {
    pub fn first_input(&self, x0: AxisState, xf: AxisState) -> f64 {
        (self.state * x0.to_vector())[0] + (self.target * xf.to_vector())[0]
    }
}

pub fn first_input_gains(k: usize, mats: &StepMatrices) -> Result<ControlGains> {
    let target = match k {
        0 => return Err(Error::HorizonTooShort(k)),
        1 => RowVector2::new(0.0, 1.0),
        _ => {
            let first_column = RowVector2::new((k - 1) as f64 * mats.dt(), 1.0);
            first_column * gramian_inverse(k, mats.dt())
        }
    };
    let state = -(target * mats.a_pow(k));
    Ok(ControlGains { state, target })
}

/// First-input gains precomputed for horizons `1..=max_horizon`.
///
/// Lookups past the table are computed on demand, so the table never fails
/// for a valid horizon.
#[derive(Debug, Clone)]
pub struct GainTable {
    mats: StepMatrices,
    gains: Vec<ControlGains>,
}

impl GainTable {
    pub fn new(mats: StepMatrices, max_horizon: usize) -> Self {
        let gains = (1..=max_horizon.max(1))
            .map(|k| first_input_gains(k, &mats).expect("k >= 1"))
            .collect();
        Self { mats, gains }
    }

    pub fn mats(&self) -> &StepMatrices {
        &self.mats
    }

    pub fn get(&self, k: usize) -> Result<ControlGains> {
        match k {
            0 => Err(Error::HorizonTooShort(0)),
            k if k <= self.gains.len() => Ok(self.gains[k - 1]),
            k => first_input_gains(k, &self.mats),
        }
    }
}

/// Constant-velocity rollout; returns the `steps` states after `x0`.
pub fn propagate_zero_control(x0: AxisState, steps: usize, mats: &StepMatrices) -> Vec<AxisState> {
    std::iter::successors(Some(x0), |x| Some(mats.step(*x, 0.0)))
        .skip(1)
        .take(steps)
        .collect()
}

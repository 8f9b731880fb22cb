//! Kalman filtering of an [`AugmentedSystem`] with evidence accumulation.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::behavior::AugmentedSystem;
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Posterior at the system's final timestep.
    pub posterior: GaussianBelief,
    /// Sum over observed timesteps of the log innovation density.
    pub log_marginal: f64,
    pub updates: usize,
}

/// Predict/update recursion over `system.start..=system.end`.
///
/// `observations[t - 1]` is the measurement at timestep `t`; `None` entries
/// only predict. The prior is the belief at `start` before its measurement.
pub fn kalman_filter(system: &AugmentedSystem, observations: &[Option<f64>]) -> Result<FilterOutput> {
    let dim = system.dim();
    let h = &system.observation;
    let r = system.obs_variance;
    let identity = DMatrix::<f64>::identity(dim, dim);

    let mut mean = system.prior.mean.clone();
    let mut cov = system.prior.covariance.clone();
    let mut log_marginal = 0.0;
    let mut updates = 0;

    for t in system.start..=system.end {
        if t > system.start {
            let tr = &system.transitions[t - 1 - system.start];
            mean = &tr.f * &mean + &tr.c;
            cov = &tr.f * &cov * tr.f.transpose() + &tr.q;
        }
        let Some(y) = observations.get(t - 1).copied().flatten() else {
            continue;
        };
        let ph = &cov * h;
        let s = h.dot(&ph) + r;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Numerical(format!(
                "innovation variance {s:e} at timestep {t} is not positive"
            )));
        }
        let innovation = y - h.dot(&mean);
        log_marginal += -0.5 * ((2.0 * PI * s).ln() + innovation * innovation / s);
        let gain = ph / s;
        mean += &gain * innovation;
        // Joseph form keeps the update symmetric and PSD under roundoff.
        let ikh = &identity - &gain * h.transpose();
        cov = &ikh * &cov * ikh.transpose() + &gain * gain.transpose() * r;
        cov = (&cov + cov.transpose()) * 0.5;
        updates += 1;
    }

    let posterior = GaussianBelief::new(mean, cov);
    posterior.check_psd()?;
    Ok(FilterOutput {
        posterior,
        log_marginal,
        updates,
    })
}

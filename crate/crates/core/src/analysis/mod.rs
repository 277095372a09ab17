//! Closed-form constants, the attenuation-regret metric and trajectory certification.

mod bounds;
mod certify;
mod constants;

pub use bounds::{
    certify_minmax_bounds, certify_value_bounds, certify_value_bounds_with, settle_horizon, BoundMethod,
    BoundSampling, ValueBounds,
};
pub use certify::{certify_cost_envelope, certify_lemma, CertificationReport, Inequality, Residual, RESIDUAL_TOL};
pub use constants::{
    alpha_f_tilde, b_coefficient, choose_a, eps_tilde_max, gamma_c, gamma_c_w, gamma_tilde, lemma1_constants,
    lemma2_coefficients, minmax_value_constants, min_horizon, theta_constants, validate_a, ConstantsReport,
    Lemma2Coefficients, MinmaxConstants, ThetaConstants, ThetaInputs,
};

use crate::error::{Error, Result};
use crate::model::Trajectory;

/// `(total - γ·energy)_+`.
pub fn regret(total_cost: f64, energy: f64, gamma: f64) -> f64 {
    (total_cost - gamma * energy).max(0.0)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstant(format!("gamma must be finite and >= 0, got {gamma}")))
    }
}

/// `(Σ c_t - γ Σ ‖w_t‖²)_+` over the whole run.
pub fn attenuation_regret(traj: &Trajectory, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(regret(traj.total_cost(), traj.energy(), gamma))
}

/// Same as [`attenuation_regret`] restricted to steps `t >= from`.
pub fn attenuation_regret_from(traj: &Trajectory, gamma: f64, from: usize) -> Result<f64> {
    check_gamma(gamma)?;
    let (c, e) = traj.totals_from(from);
    Ok(regret(c, e, gamma))
}

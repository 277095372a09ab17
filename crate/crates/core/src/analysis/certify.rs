use serde::Serialize;

use super::constants::ConstantsReport;
use crate::error::{Error, Result};
use crate::model::{ControllerKind, Phase, StepRecord, Trajectory};

/// Trajectory-level inequalities that can be checked from recorded data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `V_{t+1} - V_t <= Γ_V σ(x_t) + Γ^γ_V Σ_{k=t}^{t+M-1} ‖w_k‖²` for the preview controller.
    ValueDecrease,
    /// `c_{s+H} <= ᾱ a^H σ(x_s) + Σ_j M_{w,j} ‖w_j‖²` from the first recorded step `s`, for every `H >= M`.
    CostEnvelope,
    /// `ValueDecrease` with the extra `Γ^θ_V ‖θ̂ - θ‖` slack, over the control phase.
    EstimatedValueDecrease,
    /// `V^W_{t+1} - V^W_t <= Γ_{W,V} σ(x_t) + Γ^γ_{W,V} w_c²` for the min-max controller.
    MinmaxValueDecrease,
}

impl Inequality {
    pub fn name(&self) -> &'static str {
        match self {
            Inequality::ValueDecrease => "value_decrease",
            Inequality::CostEnvelope => "cost_envelope",
            Inequality::EstimatedValueDecrease => "estimated_value_decrease",
            Inequality::MinmaxValueDecrease => "minmax_value_decrease",
        }
    }

    fn controller(&self) -> ControllerKind {
        match self {
            Inequality::ValueDecrease | Inequality::CostEnvelope => ControllerKind::KnownPreview,
            Inequality::EstimatedValueDecrease => ControllerKind::UnknownPreview,
            Inequality::MinmaxValueDecrease => ControllerKind::MinmaxNoPreview,
        }
    }
}

/// Base absolute tolerance on `LHS - RHS`.
pub const RESIDUAL_TOL: f64 = 1e-6;

fn tolerance(scale: f64) -> f64 {
    RESIDUAL_TOL * (scale.abs() / 1e3).max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Residual {
    /// Step index (for `CostEnvelope`, the time `s + H` whose cost is bounded).
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificationReport {
    pub inequality: Inequality,
    pub residuals: Vec<Residual>,
    /// `None` when there was nothing to check.
    pub max_residual: Option<f64>,
    pub violations: Vec<usize>,
    pub tolerance: f64,
    pub empirical: bool,
    pub passed: bool,
}

impl CertificationReport {
    fn from_residuals(inequality: Inequality, residuals: Vec<Residual>, empirical: bool) -> Self {
        let max_residual = residuals.iter().map(|r| r.residual).reduce(f64::max);
        let violations: Vec<usize> = residuals
            .iter()
            .filter(|r| !(r.residual <= r.tolerance))
            .map(|r| r.t)
            .collect();
        Self {
            inequality,
            passed: violations.is_empty(),
            residuals,
            max_residual,
            violations,
            tolerance: RESIDUAL_TOL,
            empirical,
        }
    }
}

/// Evaluates `which` at every applicable step of `traj`.
///
/// `theta_error` overrides the recorded `‖θ̂ - θ‖` for `EstimatedValueDecrease`.
pub fn certify_lemma(
    traj: &Trajectory,
    which: Inequality,
    constants: &ConstantsReport,
    theta_error: Option<f64>,
) -> Result<CertificationReport> {
    if traj.controller != which.controller() {
        return Err(Error::CheckMismatch {
            check: which.name(),
            controller: traj.controller.name(),
        });
    }
    if traj.horizon != constants.horizon {
        return Err(Error::config(format!(
            "trajectory horizon {} differs from constants horizon {}",
            traj.horizon, constants.horizon
        )));
    }
    let residuals = match which {
        Inequality::ValueDecrease => {
            value_pairs(traj, |r| constants.gamma_v * r.sigma + constants.gamma_gamma_v * r.window_energy)
        }
        Inequality::EstimatedValueDecrease => {
            let th = constants
                .theta
                .as_ref()
                .ok_or_else(|| Error::InvalidConstant("parameter-error constants not computed".into()))?;
            let err = theta_error
                .or_else(|| traj.estimate.as_ref().and_then(|e| e.actual_error))
                .ok_or_else(|| Error::InvalidConstant("parameter error |theta_hat - theta| unknown".into()))?;
            let slack = th.gamma_theta_v * err;
            value_pairs(traj, |r| {
                constants.gamma_v * r.sigma + constants.gamma_gamma_v * r.window_energy + slack
            })
        }
        Inequality::MinmaxValueDecrease => {
            let mm = constants
                .minmax
                .as_ref()
                .ok_or_else(|| Error::InvalidConstant("min-max constants not computed".into()))?;
            let w_c = traj
                .w_c
                .ok_or_else(|| Error::InvalidConstant("trajectory has no disturbance bound".into()))?;
            value_pairs(traj, |r| mm.gamma_w_v * r.sigma + mm.gamma_gamma_w_v * w_c * w_c)
        }
        Inequality::CostEnvelope => {
            let start = traj.records.first().map_or(1, |r| r.t);
            let h_max = traj.len().saturating_sub(1);
            return certify_cost_envelope(traj, constants, start, h_max);
        }
    };
    Ok(CertificationReport::from_residuals(which, residuals, constants.empirical))
}

fn value_pairs<F: Fn(&StepRecord) -> f64>(traj: &Trajectory, rhs: F) -> Vec<Residual> {
    traj.records
        .windows(2)
        .filter(|p| p[0].phase == Phase::Control && p[1].phase == Phase::Control)
        .filter_map(|p| {
            let (v0, v1) = (p[0].value?, p[1].value?);
            let lhs = v1 - v0;
            let rhs = rhs(&p[0]);
            Some(Residual {
                t: p[0].t,
                lhs,
                rhs,
                residual: lhs - rhs,
                tolerance: tolerance(v0.abs().max(v1.abs())),
            })
        })
        .collect()
}

/// Per-step cost envelope from step `start` for lookaheads `H = M..=h_max`.
pub fn certify_cost_envelope(
    traj: &Trajectory,
    constants: &ConstantsReport,
    start: usize,
    h_max: usize,
) -> Result<CertificationReport> {
    let which = Inequality::CostEnvelope;
    if traj.controller != which.controller() {
        return Err(Error::CheckMismatch {
            check: which.name(),
            controller: traj.controller.name(),
        });
    }
    let first = traj.records.first().map_or(start, |r| r.t);
    let rec = |t: usize| t.checked_sub(first).and_then(|i| traj.records.get(i));
    let s = rec(start).ok_or(Error::TimeOutOfRange { t: start, max: first + traj.len() })?;
    let energy = |j: usize| rec(j).map_or(0.0, |r| r.w.norm_squared());
    let mut residuals = Vec::new();
    for h in constants.horizon..=h_max {
        let Some(target) = rec(start + h) else { break };
        let coeffs = constants.envelope_coefficients(h, start)?;
        let rhs = coeffs.bound(s.sigma, energy);
        let lhs = target.stage_cost;
        residuals.push(Residual {
            t: start + h,
            lhs,
            rhs,
            residual: lhs - rhs,
            tolerance: tolerance(lhs),
        });
    }
    Ok(CertificationReport::from_residuals(which, residuals, constants.empirical))
}

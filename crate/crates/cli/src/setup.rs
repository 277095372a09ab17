use nalgebra::DVector;
use serde::Serialize;

use rhc_core::analysis::{
    certify_minmax_bounds, certify_value_bounds_with, min_horizon, BoundMethod, BoundSampling, ConstantsReport,
    ThetaInputs,
};
use rhc_core::controller::OnlineRunConfig;
use rhc_core::estimation::theta_lipschitz;
use rhc_core::model::{CostModel, SystemModel};

use crate::scenario::{ControllerChoice, Scenario};
use crate::CliError;

const MAX_HORIZON: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    Override,
    QuadraticForm,
    Sampled,
}

impl From<BoundMethod> for ConstantsSource {
    fn from(m: BoundMethod) -> Self {
        match m {
            BoundMethod::QuadraticForm => ConstantsSource::QuadraticForm,
            BoundMethod::Sampled => ConstantsSource::Sampled,
        }
    }
}

/// Sampled bounds compared against user-supplied ones.
#[derive(Clone, Debug, Serialize)]
pub struct SpotCheck {
    pub alpha_hi_sampled: Option<f64>,
    pub gamma_bar_sampled: Option<f64>,
    pub consistent: bool,
    /// Set when the sampler could not produce bounds at all.
    pub note: Option<String>,
}

/// Where each constant came from.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub value_bounds: ConstantsSource,
    pub minmax_bounds: Option<ConstantsSource>,
    pub theta_lipschitz: Option<ConstantsSource>,
    pub horizon_chosen: bool,
    pub state_radius: f64,
    pub sampled_w_c: f64,
    pub spot_check: Option<SpotCheck>,
}

/// A scenario resolved into core objects plus its constants.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: SystemModel,
    pub costs: CostModel,
    pub cfg: OnlineRunConfig,
    pub x0: DVector<f64>,
    /// Bound the min-max controller plans against.
    pub w_plan: f64,
    pub constants: ConstantsReport,
    pub provenance: Provenance,
}

struct Bounds {
    alpha: f64,
    gamma: f64,
    source: ConstantsSource,
    minmax: Option<(f64, f64, ConstantsSource)>,
}

fn pair(a: Option<f64>, g: Option<f64>, what: &str) -> Result<Option<(f64, f64)>, CliError> {
    match (a, g) {
        (Some(a), Some(g)) => Ok(Some((a, g))),
        (None, None) => Ok(None),
        _ => Err(CliError::Config(format!("{what} overrides must be given together"))),
    }
}

pub fn prepare(s: &Scenario) -> Result<Prepared, CliError> {
    s.check_references()?;
    let model = s.model()?;
    let steps = s.run.steps;
    let o = &s.constants;
    let minmax = s.controller == ControllerChoice::Minmax;
    let w_plan = s.planning_bound();
    let w_sample = if minmax { w_plan } else { s.disturbance.w_c };
    let x0 = s.x0();
    let radius = s
        .certification
        .state_radius
        .unwrap_or_else(|| (2.0 * x0.norm()).max(1.0) + 4.0 * w_sample);
    let sampling = BoundSampling {
        samples: s.certification.samples,
        seed: s.certification.seed,
        state_radius: radius,
        w_c: w_sample,
        margin: s.certification.margin,
    };
    let preview_override = pair(o.alpha_hi, o.gamma_bar, "alpha_hi/gamma_bar")?;
    let minmax_override = pair(o.alpha_w, o.gamma_bar_w, "alpha_w/gamma_bar_w")?;

    let bounds_at = |m: usize, costs: &CostModel| -> Result<Bounds, CliError> {
        let (alpha, gamma, source) = match preview_override {
            Some((a, g)) => (a, g, ConstantsSource::Override),
            None => {
                let b = certify_value_bounds_with(&model, costs, m, &sampling)?;
                (b.alpha_hi, b.gamma_bar, b.method.into())
            }
        };
        let mm = if !minmax {
            None
        } else if let Some((a, g)) = minmax_override {
            Some((a, g, ConstantsSource::Override))
        } else if w_plan > 0.0 {
            let b = certify_minmax_bounds(&model, costs, m, w_plan, &sampling)?;
            Some((b.alpha_hi, b.gamma_bar, ConstantsSource::Sampled))
        } else {
            // nothing to plan against: the min-max value is the preview value
            Some((alpha, 0.0, source))
        };
        Ok(Bounds { alpha, gamma, source, minmax: mm })
    };

    let probe = s.costs(steps + MAX_HORIZON)?;
    let alpha_lo = probe.alpha_lo();
    let (horizon, bounds) = match s.run.horizon {
        Some(m) => {
            if m < 2 {
                return Err(CliError::Config(format!("horizon M must be >= 2, got {m}")));
            }
            (m, bounds_at(m, &s.costs(steps + m - 1)?)?)
        }
        None => {
            let mut m = 2;
            loop {
                let b = bounds_at(m, &probe)?;
                let hi = b.minmax.map_or(b.alpha, |(a, _, _)| a.max(b.alpha));
                let need = min_horizon(alpha_lo, hi)?;
                if m >= need {
                    break (m, b);
                }
                if need > MAX_HORIZON {
                    return Err(CliError::Certification(format!(
                        "horizon threshold {need} exceeds the supported maximum {MAX_HORIZON}"
                    )));
                }
                m = need;
            }
        }
    };
    let costs = s.costs(steps + horizon - 1)?;

    let spot_check = if bounds.source == ConstantsSource::Override {
        let quick = BoundSampling { samples: sampling.samples.min(40), ..sampling };
        Some(match certify_value_bounds_with(&model, &costs, horizon, &quick) {
            Ok(b) => SpotCheck {
                alpha_hi_sampled: Some(b.alpha_hi),
                gamma_bar_sampled: Some(b.gamma_bar),
                consistent: b.alpha_hi <= bounds.alpha * (1.0 + 1e-9)
                    && b.gamma_bar <= bounds.gamma * (1.0 + 1e-9),
                note: None,
            },
            Err(e) => SpotCheck {
                alpha_hi_sampled: None,
                gamma_bar_sampled: None,
                consistent: false,
                note: Some(e.to_string()),
            },
        })
    } else {
        None
    };

    let mut empirical = bounds.source == ConstantsSource::Sampled;
    let mut constants = ConstantsReport::compute(alpha_lo, bounds.alpha, bounds.gamma, horizon, o.eps_tilde)?;
    if let Some((a, g, src)) = bounds.minmax {
        empirical |= src == ConstantsSource::Sampled;
        constants = constants.with_minmax(a, g, o.eps_tilde)?;
    }

    let mut theta_source = None;
    if s.controller == ControllerChoice::UnknownPreview {
        let (alpha_v, alpha_kappa) = match pair(o.alpha_v, o.alpha_kappa, "alpha_v/alpha_kappa")? {
            Some(p) => {
                theta_source = Some(ConstantsSource::Override);
                p
            }
            None => {
                theta_source = Some(ConstantsSource::Sampled);
                empirical = true;
                let step = 0.05 * model.theta().norm().max(1.0);
                let l = theta_lipschitz(
                    &model,
                    &costs,
                    horizon,
                    radius,
                    w_sample,
                    step,
                    s.certification.theta_samples,
                    s.certification.seed,
                )?;
                (l.alpha_v, l.alpha_kappa)
            }
        };
        let u_max = model
            .control_box()
            .lower()
            .iter()
            .chain(model.control_box().upper().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let alpha_c = match o.alpha_c {
            Some(c) => c,
            None => s.quadratic_cost()?.lipschitz_on(radius, u_max),
        };
        let inputs = ThetaInputs {
            alpha_v,
            alpha_kappa,
            alpha_c,
            alpha_f: model.alpha_f(),
            s: model.theta_bound(),
        };
        constants = constants.with_theta(inputs, horizon)?;
    }
    let constants = constants.empirical(empirical);

    let mut cfg = OnlineRunConfig::new(steps, horizon).with_seed(s.run.seed);
    cfg.gamma_grid = s.run.gamma_grid.clone();
    if let Some(n) = s.run.estimation_len {
        cfg = cfg.with_estimation(n);
    }
    if let Some(c) = s.run.state_ceiling {
        cfg = cfg.with_state_ceiling(c);
    }
    cfg.validate()?;

    Ok(Prepared {
        model,
        costs,
        cfg,
        x0,
        w_plan,
        constants,
        provenance: Provenance {
            value_bounds: bounds.source,
            minmax_bounds: bounds.minmax.map(|b| b.2),
            theta_lipschitz: theta_source,
            horizon_chosen: s.run.horizon.is_none(),
            state_radius: radius,
            sampled_w_c: w_sample,
            spot_check,
        },
    })
}

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rhc_core::controller::DisturbanceSource;
use rhc_core::disturbance::DisturbanceSpec;
use rhc_core::estimation::{Estimator, LinearInParamsLeastSquares, LinearLeastSquares, SyntheticEstimator};
use rhc_core::model::{
    pack_linear_params, ControlBox, CostModel, CostSchedule, CubicDrift, Pendulum, QuadraticCost, SystemKind,
    SystemModel,
};

use crate::CliError;

/// One experiment: plant, cost, disturbance, controller and run settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub system: SystemSpec,
    pub control_box: BoxSpec,
    pub cost: CostSpec,
    pub disturbance: DisturbanceSpec,
    pub run: RunSpec,
    pub x0: Vec<f64>,
    pub controller: ControllerChoice,
    #[serde(default)]
    pub estimator: Option<EstimatorSpec>,
    /// Disturbance bound the min-max controller plans against; defaults to `disturbance.w_c`.
    #[serde(default)]
    pub w_c: Option<f64>,
    #[serde(default)]
    pub constants: ConstantOverrides,
    #[serde(default)]
    pub certification: CertificationSpec,
    /// Parameter grids for `sweep`.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(flatten)]
    pub dynamics: DynamicsSpec,
    /// Lipschitz constant of the dynamics in θ.
    #[serde(default)]
    pub alpha_f: Option<f64>,
    /// Norm bound `S` on admissible parameters.
    #[serde(default)]
    pub theta_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsSpec {
    /// `x' = Ax + Bu + w`; matrices are row-major.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// Scalar `x' = x + u + θx³ + w`.
    CubicDrift { theta: f64 },
    /// Damped pendulum, linear in its two parameters.
    Pendulum { dt: f64, theta: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    Symmetric { bound: f64 },
    Bounds { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    #[default]
    Constant,
    Sinusoid { amplitude: f64, period: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub steps: usize,
    /// Planning horizon; chosen as the smallest admissible value when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub estimation_len: Option<usize>,
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub state_ceiling: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    KnownPreview,
    UnknownPreview,
    #[serde(alias = "minmax_no_preview")]
    Minmax,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    LeastSquares,
    /// Returns `θ + δ` with `‖δ‖ = c_g/√N`.
    Synthetic {
        c_g: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// User-supplied constants; anything absent is certified from samples.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    pub alpha_hi: Option<f64>,
    pub gamma_bar: Option<f64>,
    pub alpha_v: Option<f64>,
    pub alpha_kappa: Option<f64>,
    pub alpha_c: Option<f64>,
    pub eps_tilde: Option<f64>,
    pub alpha_w: Option<f64>,
    pub gamma_bar_w: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sampling radius for states; defaults to `max(1, 2‖x0‖) + 4 w_c`.
    #[serde(default)]
    pub state_radius: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Largest lookahead `H` checked by the cost envelope; all available steps when absent.
    #[serde(default)]
    pub max_lookahead: Option<usize>,
    #[serde(default = "default_theta_samples")]
    pub theta_samples: usize,
}

fn default_samples() -> usize {
    150
}

fn default_margin() -> f64 {
    0.05
}

fn default_theta_samples() -> usize {
    40
}

impl Default for CertificationSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
            state_radius: None,
            margin: default_margin(),
            max_lookahead: None,
            theta_samples: default_theta_samples(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
        s.check_references()?;
        Ok(s)
    }

    /// Cross-field requirements that serde cannot express.
    pub fn check_references(&self) -> Result<(), CliError> {
        match self.controller {
            ControllerChoice::UnknownPreview => {
                if self.estimator.is_none() {
                    return Err(CliError::Config("unknown_preview controller requires an estimator".into()));
                }
                if self.run.estimation_len.is_none() {
                    return Err(CliError::Config("unknown_preview controller requires run.estimation_len".into()));
                }
            }
            ControllerChoice::Minmax => {
                if self.planning_bound() < 0.0 {
                    return Err(CliError::Config("min-max controller requires w_c >= 0".into()));
                }
            }
            ControllerChoice::KnownPreview => {}
        }
        Ok(())
    }

    pub fn planning_bound(&self) -> f64 {
        self.w_c.unwrap_or(self.disturbance.w_c)
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        let bx = match &self.control_box {
            BoxSpec::Symmetric { bound } => {
                let m = match &self.system.dynamics {
                    DynamicsSpec::Linear { b, .. } => b.first().map_or(0, Vec::len),
                    _ => 1,
                };
                ControlBox::symmetric(m, *bound)?
            }
            BoxSpec::Bounds { lower, upper } => {
                ControlBox::new(DVector::from_vec(lower.clone()), DVector::from_vec(upper.clone()))?
            }
        };
        let mut model = match &self.system.dynamics {
            DynamicsSpec::Linear { a, b } => {
                let a = matrix(a, "system.a")?;
                let b = matrix(b, "system.b")?;
                if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
                    return Err(CliError::Config("system.a must be n x n and system.b n x m".into()));
                }
                let theta = pack_linear_params(&a, &b);
                SystemModel::new(
                    Arc::new(rhc_core::model::LinearDynamics::new(a.nrows(), b.ncols())),
                    SystemKind::Linear,
                    theta,
                    bx,
                    self.system.alpha_f.unwrap_or(1.0),
                )?
            }
            DynamicsSpec::CubicDrift { theta } => SystemModel::linear_in_params(
                Arc::new(CubicDrift),
                DVector::from_element(1, *theta),
                bx,
                self.system.alpha_f.unwrap_or(1.0),
            )?,
            DynamicsSpec::Pendulum { dt, theta } => SystemModel::linear_in_params(
                Arc::new(Pendulum { dt: *dt }),
                DVector::from_vec(theta.clone()),
                bx,
                self.system.alpha_f.unwrap_or(*dt),
            )?,
        };
        if let Some(s) = self.system.theta_bound {
            model = model.with_theta_bound(s)?;
        }
        if self.x0.len() != model.n() {
            return Err(CliError::Config(format!(
                "x0 has {} entries but the state dimension is {}",
                self.x0.len(),
                model.n()
            )));
        }
        Ok(model)
    }

    pub fn quadratic_cost(&self) -> Result<QuadraticCost, CliError> {
        let q = matrix(&self.cost.q, "cost.q")?;
        let r = matrix(&self.cost.r, "cost.r")?;
        let schedule = match self.cost.schedule {
            ScheduleSpec::Constant => CostSchedule::Constant,
            ScheduleSpec::Sinusoid { amplitude, period } => CostSchedule::Sinusoid { amplitude, period },
        };
        Ok(QuadraticCost::new(q, r)?.with_schedule(schedule)?)
    }

    /// Costs valid for `t <= t_max`, repeating `c_T` past the episode end.
    pub fn costs(&self, t_max: usize) -> Result<CostModel, CliError> {
        Ok(CostModel::from_quadratic(self.quadratic_cost()?, t_max)?.with_padding(self.run.steps))
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    pub fn source(&self) -> DisturbanceSource {
        DisturbanceSource::Spec(self.disturbance.clone())
    }

    pub fn estimator(&self) -> Result<Option<Box<dyn Estimator>>, CliError> {
        let Some(spec) = &self.estimator else { return Ok(None) };
        Ok(Some(match spec {
            EstimatorSpec::LeastSquares => match self.system.dynamics {
                DynamicsSpec::Linear { .. } => Box::new(LinearLeastSquares) as Box<dyn Estimator>,
                _ => Box::new(LinearInParamsLeastSquares),
            },
            EstimatorSpec::Synthetic { c_g, seed } => {
                if !(*c_g >= 0.0 && c_g.is_finite()) {
                    return Err(CliError::Config(format!("estimator c_g must be >= 0, got {c_g}")));
                }
                Box::new(SyntheticEstimator { c_g: *c_g, seed: *seed })
            }
        }))
    }

    /// Replaces every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.disturbance.seed = seed;
        if let Some(EstimatorSpec::Synthetic { seed: s, .. }) = &mut self.estimator {
            *s = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SCALAR: &str = r#"{
        "name": "scalar",
        "system": {"kind": "linear", "a": [[1.0]], "b": [[1.0]]},
        "control_box": {"bound": 10.0},
        "cost": {"q": [[1.0]], "r": [[1.0]]},
        "disturbance": {"kind": "sinusoid", "period": 12.0, "w_c": 0.5},
        "run": {"steps": 40, "seed": 3},
        "x0": [1.0],
        "controller": "known_preview"
    }"#;

    #[test]
    fn parses_and_builds() {
        let s = Scenario::parse(SCALAR).unwrap();
        let model = s.model().unwrap();
        assert_eq!(model.n(), 1);
        assert_eq!(model.kind(), SystemKind::Linear);
        let costs = s.costs(60).unwrap();
        assert_eq!(costs.t_max(), 60);
        assert!(s.estimator().unwrap().is_none());
    }

    #[test]
    fn unknown_controller_needs_estimator() {
        let text = SCALAR.replace("\"known_preview\"", "\"unknown_preview\"");
        assert!(matches!(Scenario::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_unknown_fields_and_bad_shapes() {
        let text = SCALAR.replace("\"x0\"", "\"typo\": 1, \"x0\"");
        assert!(Scenario::parse(&text).is_err());
        let text = SCALAR.replace("[[1.0]], \"b\"", "[[1.0, 2.0]], \"b\"");
        assert!(Scenario::parse(&text).unwrap().model().is_err());
    }

    #[test]
    fn reseed_touches_every_seed() {
        let mut s = Scenario::parse(&SCALAR.replace("\"known_preview\"", "\"unknown_preview\", \"estimator\": {\"kind\": \"synthetic\", \"c_g\": 1.0}").replace("\"seed\": 3", "\"seed\": 3, \"estimation_len\": 5")).unwrap();
        s.reseed(42);
        assert_eq!(s.run.seed, 42);
        assert_eq!(s.disturbance.seed, 42);
        assert!(matches!(s.estimator, Some(EstimatorSpec::Synthetic { seed: 42, .. })));
    }
}

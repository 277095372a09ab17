//! Online closed-loop runs for the three controllers.

use nalgebra::DVector;

use crate::disturbance::{DisturbanceSpec, GreedyContext};
use crate::error::{Error, Result};
use crate::estimation::{probe_input, Dataset, Estimator};
use crate::minmax::{MinMaxOptions, MinMaxProblem};
use crate::model::{
    ControlInput, ControllerKind, CostModel, Disturbance, Phase, State, StepRecord, SystemModel,
    Trajectory,
};
use crate::rhc::{HorizonProblem, SolverOptions};

#[derive(Clone, Debug)]
pub struct OnlineRunConfig {
    /// Episode length `T`.
    pub steps: usize,
    /// Planning horizon `M`.
    pub horizon: usize,
    /// Estimation-phase length `N` (estimate-then-control runs only).
    pub estimation_len: Option<usize>,
    pub gamma_grid: Vec<f64>,
    pub seed: u64,
    /// Runs abort once `‖x_t‖` exceeds this.
    pub state_ceiling: f64,
    /// First time index simulated; the initial state is `x_start`.
    pub start: usize,
    pub solver: SolverOptions,
    pub minmax: MinMaxOptions,
}

impl OnlineRunConfig {
    pub fn new(steps: usize, horizon: usize) -> Self {
        Self {
            steps,
            horizon,
            estimation_len: None,
            gamma_grid: Vec::new(),
            seed: 0,
            state_ceiling: 1e6,
            start: 1,
            solver: SolverOptions::default(),
            minmax: MinMaxOptions::default(),
        }
    }

    pub fn with_estimation(mut self, n: usize) -> Self {
        self.estimation_len = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_start(mut self, start: usize) -> Self {
        self.start = start;
        self
    }

    pub fn with_state_ceiling(mut self, ceiling: f64) -> Self {
        self.state_ceiling = ceiling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config(format!("horizon M must be >= 2, got {}", self.horizon)));
        }
        if self.steps < self.horizon + 1 {
            return Err(Error::config(format!(
                "episode length T = {} must be >= M + 1 = {}",
                self.steps,
                self.horizon + 1
            )));
        }
        if self.start == 0 || self.start > self.steps {
            return Err(Error::config(format!(
                "start time {} must lie in 1..={}",
                self.start, self.steps
            )));
        }
        if let Some(n) = self.estimation_len {
            if n == 0 || n >= self.steps {
                return Err(Error::config(format!(
                    "estimation length N = {n} must satisfy 1 <= N < T = {}",
                    self.steps
                )));
            }
        }
        if !(self.state_ceiling > 0.0) {
            return Err(Error::config("state ceiling must be positive"));
        }
        if self.gamma_grid.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::config("attenuation levels must be >= 0"));
        }
        Ok(())
    }

    fn check_costs(&self, costs: &CostModel) -> Result<()> {
        let needed = self.steps + self.horizon - 1;
        if costs.t_max() < needed {
            return Err(Error::config(format!(
                "cost model covers t <= {} but runs need t <= T + M - 1 = {needed}",
                costs.t_max()
            )));
        }
        Ok(())
    }
}

/// Where realized disturbances come from.
#[derive(Clone, Debug)]
pub enum DisturbanceSource {
    Spec(DisturbanceSpec),
    /// `w_1, w_2, ...`; zero past the end.
    Sequence(Vec<Disturbance>),
    /// Replays the first worst-case disturbance of the min-max plan at each step.
    WorstCase,
}

impl From<DisturbanceSpec> for DisturbanceSource {
    fn from(spec: DisturbanceSpec) -> Self {
        DisturbanceSource::Spec(spec)
    }
}

impl DisturbanceSource {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            DisturbanceSource::Spec(s) => s.validate(n),
            DisturbanceSource::Sequence(seq) => {
                for w in seq {
                    crate::model::check_len(w, n)?;
                }
                Ok(())
            }
            DisturbanceSource::WorstCase => Ok(()),
        }
    }

    fn is_adaptive(&self) -> bool {
        match self {
            DisturbanceSource::Spec(s) => s.is_adaptive(),
            DisturbanceSource::Sequence(_) => false,
            DisturbanceSource::WorstCase => true,
        }
    }

    fn at(&self, t: usize, n: usize, last: usize) -> Result<Disturbance> {
        if t > last {
            return Ok(DVector::zeros(n));
        }
        match self {
            DisturbanceSource::Spec(s) => s.at(t, n),
            DisturbanceSource::Sequence(seq) => {
                Ok(seq.get(t - 1).cloned().unwrap_or_else(|| DVector::zeros(n)))
            }
            DisturbanceSource::WorstCase => Err(Error::MissingContext),
        }
    }

    /// `w_{t..t+M-1}`, zero beyond the episode end `last`.
    fn window(&self, t: usize, horizon: usize, n: usize, last: usize) -> Result<Vec<Disturbance>> {
        (t..t + horizon).map(|k| self.at(k, n, last)).collect()
    }
}

fn guard(t: usize, x: &State, ceiling: f64, traj: &Trajectory) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > ceiling {
        return Err(Error::Diverged {
            t,
            norm,
            ceiling,
            partial: Box::new(traj.clone()),
        });
    }
    Ok(())
}

fn shift(controls: &[ControlInput]) -> Vec<ControlInput> {
    let mut out: Vec<ControlInput> = controls[1..].to_vec();
    out.push(controls.last().unwrap().clone());
    out
}

/// Known system with disturbance preview.
pub fn run_known_preview(
    model: &SystemModel,
    costs: &CostModel,
    source: &DisturbanceSource,
    x_start: &State,
    cfg: &OnlineRunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_costs(costs)?;
    source.validate(model.n())?;
    crate::model::check_len(x_start, model.n())?;
    if source.is_adaptive() {
        return Err(Error::config(
            "adaptive disturbances cannot be previewed; use the min-max controller",
        ));
    }
    let mut traj = Trajectory::new(ControllerKind::KnownPreview, cfg.horizon);
    let problem = HorizonProblem::new(model, costs, cfg.horizon).with_options(cfg.solver);
    preview_loop(model, costs, source, x_start, cfg, &problem, cfg.start, &mut traj)?;
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn preview_loop(
    model: &SystemModel,
    costs: &CostModel,
    source: &DisturbanceSource,
    x_start: &State,
    cfg: &OnlineRunConfig,
    problem: &HorizonProblem<'_>,
    from: usize,
    traj: &mut Trajectory,
) -> Result<()> {
    let n = model.n();
    let mut x = x_start.clone();
    let mut warm: Option<Vec<ControlInput>> = None;
    for t in from..=cfg.steps {
        guard(t, &x, cfg.state_ceiling, traj)?;
        let preview = source.window(t, cfg.horizon, n, cfg.steps)?;
        let sol = problem.solve_warm(t, &x, &preview, warm.as_deref())?;
        let u = sol.controls[0].clone();
        let w = preview[0].clone();
        let stage_cost = costs.eval(t, &x, &u)?;
        let next = model.step(&x, &u, &w)?;
        traj.push(StepRecord {
            t,
            sigma: costs.sigma(&x),
            x,
            u,
            w,
            stage_cost,
            value: Some(sol.value),
            window_energy: crate::disturbance::energy(&preview),
            phase: Phase::Control,
        });
        warm = Some(shift(&sol.controls));
        x = next;
    }
    guard(cfg.steps + 1, &x, cfg.state_ceiling, traj)?;
    traj.final_state = Some(x);
    Ok(())
}

/// Unknown system: probe for `t < N`, estimate at `t = N`, then plan with the estimate
/// while the true system evolves.
pub fn run_unknown_preview(
    model: &SystemModel,
    costs: &CostModel,
    source: &DisturbanceSource,
    estimator: &dyn Estimator,
    x_start: &State,
    cfg: &OnlineRunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_costs(costs)?;
    source.validate(model.n())?;
    crate::model::check_len(x_start, model.n())?;
    if source.is_adaptive() {
        return Err(Error::config(
            "adaptive disturbances cannot be previewed; use the min-max controller",
        ));
    }
    let phase_len = cfg
        .estimation_len
        .ok_or_else(|| Error::config("estimate-then-control runs need an estimation length N"))?;
    if phase_len < cfg.start {
        return Err(Error::config("estimation length must not precede the start time"));
    }
    let n = model.n();
    let mut traj = Trajectory::new(ControllerKind::UnknownPreview, cfg.horizon);
    let mut data = Dataset::new();
    let mut x = x_start.clone();
    for t in cfg.start..phase_len {
        guard(t, &x, cfg.state_ceiling, &traj)?;
        let u = probe_input(t, model.control_box(), cfg.seed);
        let w = source.at(t, n, cfg.steps)?;
        let stage_cost = costs.eval(t, &x, &u)?;
        let next = model.step(&x, &u, &w)?;
        data.push(next.clone(), x.clone(), u.clone(), w.clone());
        traj.push(StepRecord {
            t,
            sigma: costs.sigma(&x),
            x,
            u,
            w,
            stage_cost,
            value: None,
            window_energy: 0.0,
            phase: Phase::Estimation,
        });
        x = next;
    }
    let report = estimator
        .estimate(&data, model, phase_len)
        .map_err(|e| Error::Estimation {
            t: phase_len,
            source: Box::new(e),
            partial: Box::new(traj.clone()),
        })?
        .with_truth(model.theta());
    let theta_hat = report.theta_hat();
    crate::model::check_len(&theta_hat, model.p())?;
    traj.estimation_end = Some(phase_len);
    traj.estimate = Some(report);
    let problem = HorizonProblem::new(model, costs, cfg.horizon)
        .with_theta(&theta_hat)
        .with_options(cfg.solver);
    preview_loop(model, costs, source, &x, cfg, &problem, phase_len, &mut traj)?;
    Ok(traj)
}

/// Known system, no preview: plan against the worst disturbance in the ball of radius `w_c`.
pub fn run_minmax_no_preview(
    model: &SystemModel,
    costs: &CostModel,
    source: &DisturbanceSource,
    w_c: f64,
    x_start: &State,
    cfg: &OnlineRunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_costs(costs)?;
    source.validate(model.n())?;
    crate::model::check_len(x_start, model.n())?;
    let n = model.n();
    let tol = w_c * (1.0 + 1e-12) + 1e-15;
    let mut traj = Trajectory::new(ControllerKind::MinmaxNoPreview, cfg.horizon);
    traj.w_c = Some(w_c);
    let problem = MinMaxProblem::new(model, costs, cfg.horizon, w_c).with_options(cfg.minmax);
    let mut x = x_start.clone();
    for t in cfg.start..=cfg.steps {
        guard(t, &x, cfg.state_ceiling, &traj)?;
        let sol = problem.solve(t, &x)?;
        let u = sol.controls[0].clone();
        let w = match source {
            DisturbanceSource::Spec(spec) if spec.is_adaptive() => spec.greedy(&GreedyContext {
                model,
                costs,
                t,
                x: &x,
                u: &u,
            }),
            DisturbanceSource::WorstCase => sol.worst_disturbances[0].clone(),
            _ => source.at(t, n, cfg.steps)?,
        };
        if w.norm() > tol {
            return Err(Error::config(format!(
                "realized disturbance at t={t} has norm {} above w_c = {w_c}",
                w.norm()
            )));
        }
        let stage_cost = costs.eval(t, &x, &u)?;
        let next = model.step(&x, &u, &w)?;
        traj.push(StepRecord {
            t,
            sigma: costs.sigma(&x),
            x,
            u,
            w,
            stage_cost,
            value: Some(sol.value),
            window_energy: 0.0,
            phase: Phase::Control,
        });
        x = next;
    }
    guard(cfg.steps + 1, &x, cfg.state_ceiling, &traj)?;
    traj.final_state = Some(x);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::DisturbanceKind;
    use crate::estimation::{LinearLeastSquares, SyntheticEstimator};
    use crate::model::ControlBox;
    use nalgebra::{dvector, DMatrix};

    fn scalar(a: f64) -> (SystemModel, CostModel) {
        let model = SystemModel::linear(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            ControlBox::symmetric(1, 10.0).unwrap(),
        )
        .unwrap();
        let costs = CostModel::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 200)
            .unwrap()
            .with_padding(100);
        (model, costs)
    }

    fn zero() -> DisturbanceSource {
        DisturbanceSpec::new(DisturbanceKind::Zero, 0.0).into()
    }

    #[test]
    fn config_validation() {
        assert!(OnlineRunConfig::new(10, 1).validate().is_err());
        assert!(OnlineRunConfig::new(3, 3).validate().is_err());
        assert!(OnlineRunConfig::new(10, 3).with_estimation(10).validate().is_err());
        assert!(OnlineRunConfig::new(10, 3).with_estimation(0).validate().is_err());
        assert!(OnlineRunConfig::new(10, 3).with_estimation(4).validate().is_ok());
    }

    #[test]
    fn resting_at_origin_costs_nothing() {
        let (model, costs) = scalar(1.0);
        let tr = run_known_preview(&model, &costs, &zero(), &dvector![0.0], &OnlineRunConfig::new(30, 3)).unwrap();
        assert_eq!(tr.total_cost(), 0.0);
        assert!(tr.records.iter().all(|r| r.stage_cost == 0.0));
    }

    #[test]
    fn known_preview_decays_from_unit_state() {
        let (model, costs) = scalar(1.0);
        let tr = run_known_preview(&model, &costs, &zero(), &dvector![1.0], &OnlineRunConfig::new(50, 3)).unwrap();
        assert!(tr.total_cost().is_finite());
        assert!(tr.records.last().unwrap().stage_cost < 1e-6);
        // states follow the true dynamics exactly
        for pair in tr.records.windows(2) {
            let next = model.step(&pair[0].x, &pair[0].u, &pair[0].w).unwrap();
            assert_eq!(next, pair[1].x);
        }
        let sum: f64 = tr.records.iter().map(|r| r.stage_cost).sum();
        assert!((sum - tr.total_cost()).abs() <= 1e-12 * sum);
    }

    #[test]
    fn greedy_is_rejected_for_preview_runs() {
        let (model, costs) = scalar(1.0);
        let src: DisturbanceSource = DisturbanceSpec::new(DisturbanceKind::Greedy, 1.0).into();
        assert!(run_known_preview(&model, &costs, &src, &dvector![0.0], &OnlineRunConfig::new(10, 3)).is_err());
    }

    #[test]
    fn divergence_carries_partial_trajectory() {
        let (model, costs) = scalar(3.0);
        let model = SystemModel::linear(
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 1.0),
            ControlBox::symmetric(1, 0.01).unwrap(),
        )
        .unwrap_or(model);
        let cfg = OnlineRunConfig::new(60, 3).with_state_ceiling(1e3);
        let err = run_known_preview(&model, &costs, &zero(), &dvector![1.0], &cfg).unwrap_err();
        match &err {
            Error::Diverged { partial, .. } => assert!(!partial.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.partial_trajectory().is_some());
    }

    #[test]
    fn unknown_with_exact_estimate_matches_known_from_switch_state() {
        let (model, costs) = scalar(0.9);
        let src: DisturbanceSource = DisturbanceSpec::new(DisturbanceKind::Sinusoid { period: 7.0, phase: 0.0 }, 0.5).into();
        let cfg = OnlineRunConfig::new(40, 3).with_estimation(5).with_seed(3);
        let unk = run_unknown_preview(&model, &costs, &src, &LinearLeastSquares, &dvector![0.5], &cfg).unwrap();
        assert_eq!(unk.estimation_end, Some(5));
        let x_n = unk.records.iter().find(|r| r.t == 5).unwrap().x.clone();
        let known = run_known_preview(&model, &costs, &src, &x_n, &OnlineRunConfig::new(40, 3).with_start(5)).unwrap();
        let ctrl: Vec<_> = unk.control_phase().collect();
        assert_eq!(ctrl.len(), known.len());
        for (a, b) in ctrl.iter().zip(&known.records) {
            assert_eq!(a.t, b.t);
            assert!((&a.u - &b.u).norm() <= 1e-8);
        }

        let syn = SyntheticEstimator { c_g: 0.0, seed: 1 };
        let unk2 = run_unknown_preview(&model, &costs, &src, &syn, &dvector![0.5], &cfg).unwrap();
        for (a, b) in unk2.control_phase().zip(&known.records) {
            assert!((&a.u - &b.u).norm() <= 1e-8);
        }
    }

    #[test]
    fn short_estimation_phase_reports_rank_failure() {
        let (model, costs) = scalar(0.9);
        let cfg = OnlineRunConfig::new(20, 3).with_estimation(2);
        let err = run_unknown_preview(&model, &costs, &zero(), &LinearLeastSquares, &dvector![0.5], &cfg).unwrap_err();
        assert!(matches!(err, Error::Estimation { t: 2, .. }));
    }

    #[test]
    fn minmax_with_empty_adversary_matches_preview() {
        let (model, costs) = scalar(1.0);
        let cfg = OnlineRunConfig::new(20, 3);
        let mm = run_minmax_no_preview(&model, &costs, &zero(), 0.0, &dvector![1.0], &cfg).unwrap();
        let pv = run_known_preview(&model, &costs, &zero(), &dvector![1.0], &cfg).unwrap();
        for (a, b) in mm.records.iter().zip(&pv.records) {
            assert_eq!(a.u, b.u);
            assert_eq!(a.stage_cost, b.stage_cost);
        }
    }

    #[test]
    fn minmax_rejects_realizations_outside_ball() {
        let (model, costs) = scalar(1.0);
        let src: DisturbanceSource = DisturbanceSpec::new(DisturbanceKind::Constant, 1.0).into();
        let cfg = OnlineRunConfig::new(10, 3);
        assert!(run_minmax_no_preview(&model, &costs, &src, 0.5, &dvector![0.0], &cfg).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let (model, costs) = scalar(1.0);
        let src: DisturbanceSource = DisturbanceSpec::new(DisturbanceKind::Uniform, 0.7).with_seed(9).into();
        let cfg = OnlineRunConfig::new(40, 3).with_seed(4);
        let a = run_known_preview(&model, &costs, &src, &dvector![1.0], &cfg).unwrap();
        let b = run_known_preview(&model, &costs, &src, &dvector![1.0], &cfg).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.x.as_slice(), rb.x.as_slice());
            assert_eq!(ra.u.as_slice(), rb.u.as_slice());
            assert_eq!(ra.value.map(f64::to_bits), rb.value.map(f64::to_bits));
        }
    }
}

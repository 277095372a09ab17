use serde::Serialize;

use super::{ControlInput, Disturbance, State};
use crate::estimation::EstimateReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    KnownPreview,
    UnknownPreview,
    MinmaxNoPreview,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::KnownPreview => "known_preview",
            ControllerKind::UnknownPreview => "unknown_preview",
            ControllerKind::MinmaxNoPreview => "minmax",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Estimation,
    Control,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub x: State,
    pub u: ControlInput,
    pub w: Disturbance,
    pub stage_cost: f64,
    /// `σ(x_t)`.
    pub sigma: f64,
    /// Optimal horizon value at `(t, x_t)`; absent during estimation.
    pub value: Option<f64>,
    /// `Σ_{k=t}^{t+M-1} ‖w_k‖²` over the preview the controller saw (zero without preview).
    pub window_energy: f64,
    pub phase: Phase,
}

/// Closed-loop record of one online run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub controller: ControllerKind,
    pub horizon: usize,
    pub records: Vec<StepRecord>,
    pub final_state: Option<State>,
    /// First control-phase step for estimate-then-control runs.
    pub estimation_end: Option<usize>,
    pub estimate: Option<EstimateReport>,
    /// Disturbance bound the min-max controller planned against.
    pub w_c: Option<f64>,
    total_cost: f64,
    energy: f64,
}

impl Trajectory {
    pub fn new(controller: ControllerKind, horizon: usize) -> Self {
        Self {
            controller,
            horizon,
            records: Vec::new(),
            final_state: None,
            estimation_end: None,
            estimate: None,
            w_c: None,
            total_cost: 0.0,
            energy: 0.0,
        }
    }

    pub fn push(&mut self, record: StepRecord) {
        self.total_cost += record.stage_cost;
        self.energy += record.w.norm_squared();
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// `(Σ c_t, Σ ‖w_t‖²)` over records with `t >= from`.
    pub fn totals_from(&self, from: usize) -> (f64, f64) {
        self.records
            .iter()
            .filter(|r| r.t >= from)
            .fold((0.0, 0.0), |(c, e), r| (c + r.stage_cost, e + r.w.norm_squared()))
    }

    pub fn control_phase(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Control)
    }

    /// State after step `t` (i.e. `x_{t+1}`), if recorded.
    pub fn state_after(&self, t: usize) -> Option<&State> {
        let first = self.records.first()?.t;
        let idx = t.checked_sub(first)?;
        match self.records.get(idx + 1) {
            Some(r) => Some(&r.x),
            None if idx + 1 == self.records.len() => self.final_state.as_ref(),
            None => None,
        }
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use rhc_core::analysis::{
    attenuation_regret_from, certify_cost_envelope, certify_lemma, regret, CertificationReport, ConstantsReport,
    Inequality,
};
use rhc_core::controller::{run_known_preview, run_minmax_no_preview, run_unknown_preview};
use rhc_core::estimation::EstimateReport;
use rhc_core::model::Trajectory;
use rhc_core::Error;

use crate::output::{write_json, write_trajectory};
use crate::scenario::{ControllerChoice, EstimatorSpec, Scenario};
use crate::setup::{prepare, Prepared, Provenance};
use crate::CliError;

/// Command-line adjustments applied on top of the scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gamma: Option<Vec<f64>>,
    /// `(parameter, grid)` pairs replacing the scenario's sweep entries.
    pub sweep: Vec<(String, Vec<f64>)>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) {
        if let Some(seed) = self.seed {
            s.reseed(seed);
        }
        if let Some(g) = &self.gamma {
            s.run.gamma_grid = g.clone();
        }
        for (k, v) in &self.sweep {
            s.sweep.insert(k.clone(), v.clone());
        }
    }
}

pub struct RunOutcome {
    pub prepared: Prepared,
    pub trajectory: Trajectory,
}

pub struct RunFailure {
    pub error: CliError,
    pub partial: Option<Box<Trajectory>>,
    pub prepared: Option<Box<Prepared>>,
}

impl From<CliError> for RunFailure {
    fn from(error: CliError) -> Self {
        Self { error, partial: None, prepared: None }
    }
}

/// Resolves constants and runs the scenario's controller.
pub fn run_scenario(s: &Scenario) -> Result<RunOutcome, RunFailure> {
    let p = prepare(s)?;
    let source = s.source();
    let result = match s.controller {
        ControllerChoice::KnownPreview => run_known_preview(&p.model, &p.costs, &source, &p.x0, &p.cfg),
        ControllerChoice::UnknownPreview => {
            let est = s.estimator()?.expect("checked by check_references");
            run_unknown_preview(&p.model, &p.costs, &source, est.as_ref(), &p.x0, &p.cfg)
        }
        ControllerChoice::Minmax => run_minmax_no_preview(&p.model, &p.costs, &source, p.w_plan, &p.x0, &p.cfg),
    };
    match result {
        Ok(trajectory) => Ok(RunOutcome { prepared: p, trajectory }),
        Err(e) => {
            let partial = match &e {
                Error::Diverged { partial, .. } | Error::Estimation { partial, .. } => Some(partial.clone()),
                _ => None,
            };
            Err(RunFailure { error: e.into(), partial, prepared: Some(Box::new(p)) })
        }
    }
}

#[derive(Serialize)]
struct RegretPoint {
    gamma: f64,
    regret: f64,
}

#[derive(Serialize)]
struct ControlPhase {
    from: usize,
    total_cost: f64,
    energy: f64,
    regret_at_gamma_c: f64,
}

#[derive(Serialize)]
struct Metrics<'a> {
    scenario: &'a str,
    controller: &'static str,
    seed: u64,
    steps: usize,
    horizon: usize,
    total_cost: f64,
    energy: f64,
    gamma_c: f64,
    gamma_c_w: Option<f64>,
    regret_at_gamma_c: f64,
    regret: Vec<RegretPoint>,
    control_phase: Option<ControlPhase>,
    estimate: Option<&'a EstimateReport>,
    minmax_envelope: Option<f64>,
    max_state_norm: f64,
    final_state_norm: Option<f64>,
}

#[derive(Serialize)]
struct ConstantsFile<'a> {
    seed: u64,
    constants: &'a ConstantsReport,
    provenance: &'a Provenance,
}

#[derive(Serialize)]
struct ErrorFile<'a> {
    kind: &'static str,
    exit_code: i32,
    message: String,
    seed: u64,
    partial_steps: Option<usize>,
    scenario: &'a str,
}

fn control_from(traj: &Trajectory) -> usize {
    traj.estimation_end.unwrap_or_else(|| traj.records.first().map_or(1, |r| r.t))
}

fn metrics<'a>(s: &'a Scenario, out: &'a RunOutcome) -> Metrics<'a> {
    let traj = &out.trajectory;
    let c = &out.prepared.constants;
    let gamma_c = c.gamma_c;
    let mut grid = s.run.gamma_grid.clone();
    grid.push(gamma_c);
    let control_phase = traj.estimation_end.map(|from| {
        let (cost, energy) = traj.totals_from(from);
        ControlPhase { from, total_cost: cost, energy, regret_at_gamma_c: regret(cost, energy, gamma_c) }
    });
    let minmax_envelope = match (s.controller, traj.records.first()) {
        (ControllerChoice::Minmax, Some(first)) => {
            c.minmax_envelope(traj.len(), out.prepared.w_plan, first.sigma).ok()
        }
        _ => None,
    };
    Metrics {
        scenario: &s.name,
        controller: traj.controller.name(),
        seed: s.run.seed,
        steps: s.run.steps,
        horizon: traj.horizon,
        total_cost: traj.total_cost(),
        energy: traj.energy(),
        gamma_c,
        gamma_c_w: c.minmax.as_ref().map(|m| m.gamma_c_w),
        regret_at_gamma_c: regret(traj.total_cost(), traj.energy(), gamma_c),
        regret: grid
            .into_iter()
            .map(|g| RegretPoint { gamma: g, regret: regret(traj.total_cost(), traj.energy(), g) })
            .collect(),
        control_phase,
        estimate: traj.estimate.as_ref(),
        minmax_envelope,
        max_state_norm: traj.records.iter().map(|r| r.x.norm()).fold(0.0, f64::max),
        final_state_norm: traj.final_state.as_ref().map(|x| x.norm()),
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)?;
    overrides.apply(&mut s);
    s.check_references()?;
    Ok(s)
}

/// Runs the scenario and writes its outputs, or an error record plus whatever was produced.
fn run_and_write(s: &Scenario, out_dir: &Path) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let seed = s.run.seed;
    match run_scenario(s) {
        Ok(out) => {
            write_trajectory(&out_dir.join("trajectory.csv"), &out.trajectory, seed)?;
            write_json(&out_dir.join("metrics.json"), &metrics(s, &out))?;
            write_json(
                &out_dir.join("constants.json"),
                &ConstantsFile { seed, constants: &out.prepared.constants, provenance: &out.prepared.provenance },
            )?;
            Ok(out)
        }
        Err(f) => {
            if let Some(p) = &f.partial {
                write_trajectory(&out_dir.join("trajectory.csv"), p, seed)?;
            }
            if let Some(p) = &f.prepared {
                write_json(
                    &out_dir.join("constants.json"),
                    &ConstantsFile { seed, constants: &p.constants, provenance: &p.provenance },
                )?;
            }
            write_error(out_dir, &f.error, seed, f.partial.as_ref().map(|t| t.len()), &s.name)?;
            Err(f.error)
        }
    }
}

fn write_error(
    out_dir: &Path,
    e: &CliError,
    seed: u64,
    partial_steps: Option<usize>,
    scenario: &str,
) -> Result<(), CliError> {
    write_json(
        &out_dir.join("error.json"),
        &ErrorFile { kind: e.kind(), exit_code: e.exit_code(), message: e.to_string(), seed, partial_steps, scenario },
    )
}

/// Writes an error record for failures that happen before a scenario could be loaded.
pub fn record_failure(out_dir: &Path, e: &CliError, seed: Option<u64>) {
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = write_error(out_dir, e, seed.unwrap_or(0), None, "");
    }
}

pub fn cmd_run(scenario: &Path, out_dir: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let s = load(scenario, overrides).inspect_err(|e| record_failure(out_dir, e, overrides.seed))?;
    run_and_write(&s, out_dir).map(|_| ())
}

#[derive(Serialize)]
struct CheckSummary {
    inequality: &'static str,
    checked: usize,
    max_residual: Option<f64>,
    violations: Vec<usize>,
    tolerance: f64,
    empirical: bool,
    passed: bool,
}

impl From<&CertificationReport> for CheckSummary {
    fn from(r: &CertificationReport) -> Self {
        Self {
            inequality: r.inequality.name(),
            checked: r.residuals.len(),
            max_residual: r.max_residual,
            violations: r.violations.clone(),
            tolerance: r.tolerance,
            empirical: r.empirical,
            passed: r.passed,
        }
    }
}

#[derive(Serialize)]
struct EnvelopeCheck {
    bound: f64,
    total_cost: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CertificationFile {
    seed: u64,
    passed: bool,
    checks: Vec<CheckSummary>,
    minmax_envelope: Option<EnvelopeCheck>,
}

pub fn cmd_certify(scenario: &Path, out_dir: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let s = load(scenario, overrides).inspect_err(|e| record_failure(out_dir, e, overrides.seed))?;
    let out = run_and_write(&s, out_dir)?;
    let traj = &out.trajectory;
    let c = &out.prepared.constants;
    let mut checks = Vec::new();
    let mut envelope = None;
    match s.controller {
        ControllerChoice::KnownPreview => {
            checks.push(certify_lemma(traj, Inequality::ValueDecrease, c, None)?);
            let start = control_from(traj);
            let h_max = s
                .certification
                .max_lookahead
                .unwrap_or(usize::MAX)
                .min(traj.len().saturating_sub(1));
            checks.push(certify_cost_envelope(traj, c, start, h_max)?);
        }
        ControllerChoice::UnknownPreview => {
            checks.push(certify_lemma(traj, Inequality::EstimatedValueDecrease, c, None)?);
        }
        ControllerChoice::Minmax => {
            checks.push(certify_lemma(traj, Inequality::MinmaxValueDecrease, c, None)?);
            if let Some(first) = traj.records.first() {
                let bound = c.minmax_envelope(traj.len(), out.prepared.w_plan, first.sigma)? + 1e-6;
                envelope = Some(EnvelopeCheck { bound, total_cost: traj.total_cost(), passed: traj.total_cost() <= bound });
            }
        }
    }
    let passed = checks.iter().all(|r| r.passed) && envelope.as_ref().is_none_or(|e| e.passed);
    let file = CertificationFile {
        seed: s.run.seed,
        passed,
        checks: checks.iter().map(CheckSummary::from).collect(),
        minmax_envelope: envelope,
    };
    write_json(&out_dir.join("certification.json"), &file)?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|r| !r.passed).map(|r| r.inequality.name()).collect();
        let e = CliError::Certification(format!("inequality violated: {}", failed.join(", ")));
        write_error(out_dir, &e, s.run.seed, None, &s.name)?;
        Err(e)
    }
}

const SWEEP_KEYS: [&str; 6] = ["c_g", "estimation_len", "horizon", "seed", "steps", "w_c"];

fn as_count(key: &str, v: f64) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!("sweep value {v} for {key} must be a nonnegative integer")))
    }
}

fn apply_cell(base: &Scenario, cell: &[(String, f64)]) -> Result<Scenario, CliError> {
    let mut s = base.clone();
    for (k, v) in cell {
        match k.as_str() {
            "steps" => s.run.steps = as_count(k, *v)?,
            "horizon" => s.run.horizon = Some(as_count(k, *v)?),
            "estimation_len" => s.run.estimation_len = Some(as_count(k, *v)?),
            "seed" => s.reseed(as_count(k, *v)? as u64),
            "w_c" => {
                s.disturbance.w_c = *v;
                if let Some(a) = s.disturbance.amplitude {
                    s.disturbance.amplitude = Some(a.min(*v));
                }
                if s.w_c.is_some() {
                    s.w_c = Some(*v);
                }
            }
            "c_g" => match &mut s.estimator {
                Some(EstimatorSpec::Synthetic { c_g, .. }) => *c_g = *v,
                _ => return Err(CliError::Config("sweeping c_g needs a synthetic estimator".into())),
            },
            other => return Err(CliError::Config(format!("unknown sweep parameter {other}"))),
        }
    }
    Ok(s)
}

fn cartesian(grid: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<(String, f64)>> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut cells: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (k, vals) in grid {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), *v));
                    c
                })
            })
            .collect();
    }
    cells
}

struct CellRow {
    gamma: f64,
    gamma_c: f64,
    regret: f64,
    control_regret: f64,
    total_cost: f64,
    energy: f64,
    control_cost: f64,
    control_energy: f64,
}

fn run_cell(base: &Scenario, cell: &[(String, f64)]) -> Result<Vec<CellRow>, CliError> {
    let s = apply_cell(base, cell)?;
    let out = run_scenario(&s).map_err(|f| f.error)?;
    let traj = &out.trajectory;
    let gamma_c = out.prepared.constants.gamma_c;
    let from = control_from(traj);
    let (cc, ce) = traj.totals_from(from);
    let mut gammas = vec![gamma_c];
    gammas.extend(s.run.gamma_grid.iter().copied());
    gammas
        .into_iter()
        .map(|g| {
            Ok(CellRow {
                gamma: g,
                gamma_c,
                regret: regret(traj.total_cost(), traj.energy(), g),
                control_regret: attenuation_regret_from(traj, g, from)?,
                total_cost: traj.total_cost(),
                energy: traj.energy(),
                control_cost: cc,
                control_energy: ce,
            })
        })
        .collect()
}

/// Runs the cartesian product of the sweep grid in parallel and writes `sweep.csv`.
///
/// Failed cells become rows with `status = error`; the sweep itself still succeeds.
pub fn cmd_sweep(scenario: &Path, out_dir: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let s = load(scenario, overrides).inspect_err(|e| record_failure(out_dir, e, overrides.seed))?;
    std::fs::create_dir_all(out_dir)?;
    if let Some(k) = s.sweep.keys().find(|k| !SWEEP_KEYS.contains(&k.as_str())) {
        let e = CliError::Config(format!("unknown sweep parameter {k}; expected one of {SWEEP_KEYS:?}"));
        record_failure(out_dir, &e, Some(s.run.seed));
        return Err(e);
    }
    let cells = cartesian(&s.sweep);
    let results: Vec<Result<Vec<CellRow>, CliError>> = cells.par_iter().map(|c| run_cell(&s, c)).collect();

    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(s.sweep.keys().cloned());
    header.extend(
        [
            "gamma",
            "gamma_c",
            "regret",
            "control_regret",
            "total_cost",
            "energy",
            "control_cost",
            "control_energy",
            "status",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let mut failures = 0;
    for (i, (cell, res)) in cells.iter().zip(&results).enumerate() {
        let prefix: Vec<String> = std::iter::once(i.to_string()).chain(cell.iter().map(|(_, v)| format!("{v}"))).collect();
        match res {
            Ok(rows) => {
                for r in rows {
                    let mut rec = prefix.clone();
                    rec.extend(
                        [r.gamma, r.gamma_c, r.regret, r.control_regret, r.total_cost, r.energy, r.control_cost, r.control_energy]
                            .map(|v| format!("{v}")),
                    );
                    rec.push("ok".into());
                    rec.push(String::new());
                    w.write_record(&rec)?;
                }
            }
            Err(e) => {
                failures += 1;
                let mut rec = prefix;
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push("error".into());
                rec.push(e.to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    if failures > 0 {
        eprintln!("{failures} of {} sweep cells failed; see sweep.csv", cells.len());
    }
    Ok(())
}

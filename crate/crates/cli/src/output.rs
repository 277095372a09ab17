use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use rhc_core::model::{Phase, Trajectory};

use crate::CliError;

/// Columns after the per-dimension `x_i`, `u_i`, `w_i` blocks, in order.
pub const TRAJECTORY_FIXED_COLUMNS: [&str; 7] =
    ["stage_cost", "V_t", "cumulative_cost", "cumulative_energy", "phase", "seed", "controller"];

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes `t, x_0.., u_0.., w_0.., stage_cost, V_t, cumulative_cost, cumulative_energy, phase, seed, controller`.
pub fn trajectory_csv<W: Write>(traj: &Trajectory, seed: u64, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let (n, m) = traj.records.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend((0..n).map(|i| format!("w_{i}")));
    header.extend(TRAJECTORY_FIXED_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let (mut cost, mut energy) = (0.0, 0.0);
    for r in &traj.records {
        cost += r.stage_cost;
        energy += r.w.norm_squared();
        let mut row = vec![r.t.to_string()];
        row.extend(r.x.iter().map(|v| num(*v)));
        row.extend(r.u.iter().map(|v| num(*v)));
        row.extend(r.w.iter().map(|v| num(*v)));
        row.push(num(r.stage_cost));
        row.push(r.value.map(num).unwrap_or_default());
        row.push(num(cost));
        row.push(num(energy));
        row.push(match r.phase {
            Phase::Estimation => "estimation".into(),
            Phase::Control => "control".into(),
        });
        row.push(seed.to_string());
        row.push(traj.controller.name().into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_trajectory(path: &Path, traj: &Trajectory, seed: u64) -> Result<(), CliError> {
    trajectory_csv(traj, seed, BufWriter::new(File::create(path)?))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

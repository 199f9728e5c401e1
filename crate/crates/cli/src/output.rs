//! CSV and JSON outputs.

use std::path::Path;

use serde::Serialize;
use venttsel_core::{BoundaryTrajectory, Side, StateTrajectory};

use crate::error::CliError;

/// Write a state as rows `t, j, i, value`.
pub fn write_state_csv(path: &Path, field: &StateTrajectory) -> Result<(), CliError> {
    let g = field.grid();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "j", "i", "value"])?;
    for ((n, j, i), v) in field.values().indexed_iter() {
        w.write_record([g.time(n).to_string(), j.to_string(), i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a boundary field as rows `t, comp, i, value` with `comp` 0 bottom, 1 top.
pub fn write_boundary_csv(path: &Path, field: &BoundaryTrajectory) -> Result<(), CliError> {
    let g = field.grid();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "comp", "i", "value"])?;
    for ((n, s, i), v) in field.values().indexed_iter() {
        debug_assert_eq!(Side::ALL[s].index(), s);
        w.write_record([g.time(n).to_string(), s.to_string(), i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, report: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

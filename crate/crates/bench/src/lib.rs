//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use venttsel_core::model::presets::CubicDamping;
use venttsel_core::{
    make_quadratic_problem, snapshot_from_fn, BoundaryTrajectory, DomainSpec, Grid, Nonlinearity,
    ProblemSpec, QuadraticTrackingPreset, SampleRanges, StateTrajectory,
};

pub fn grid(nx: usize, ny: usize, nt: usize) -> Grid {
    Grid::new(DomainSpec::new(1.0, 1.0, 1.0).expect("valid domain"), nx, ny, nt).expect("valid grid")
}

/// Tracking problem with a smooth target, source and initial field.
pub fn tracking(grid: &Grid, beta: f64) -> ProblemSpec {
    let target = StateTrajectory::from_fn(grid, |p| (2.0 * PI * p.x1).cos() * p.x2 + p.t);
    let source = StateTrajectory::from_fn(grid, |p| (PI * p.x2).sin() * (1.0 - 0.5 * p.t));
    let init = snapshot_from_fn(grid, |x1, x2| 0.2 * (2.0 * PI * x1).sin() + 0.1 * x2);
    make_quadratic_problem(grid, source, init, QuadraticTrackingPreset { target, beta }).expect("valid problem")
}

/// The tracking problem with `phi = u - y^3`.
pub fn cubic(grid: &Grid) -> ProblemSpec {
    let nl = Nonlinearity::new(Arc::new(CubicDamping), grid, SampleRanges::default()).expect("sign condition");
    tracking(grid, 0.5).with_nonlinearity(nl)
}

pub fn control(grid: &Grid) -> BoundaryTrajectory {
    BoundaryTrajectory::from_fn(grid, |p| 0.4 * (2.0 * PI * p.x1).cos() * (1.0 + p.t) + 0.1)
}

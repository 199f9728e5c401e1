//! Named analytic data: boundary sources, fields, controls and integrands.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use venttsel_core::model::presets::{CubicDamping, IdentityControl, LinearFeedback, LinearState, Zero};
use venttsel_core::model::{BoundaryStateTerm, VolumeTerm};
use venttsel_core::{
    make_quadratic_problem, manufactured_solution, BoundaryTrajectory, Constraint, ConstraintKind,
    ConstraintSpec, ControlBounds, Grid, Nonlinearity, ProblemSpec, QuadraticTrackingPreset,
    SampleRanges, StateTrajectory, SurfaceTerm,
};

use crate::config::{ConstraintConfig, ProblemConfig};
use crate::error::CliError;

pub const PHI_KEYS: [&str; 3] = ["phi_identity", "phi_cubic", "phi_feedback"];
pub const FIELD_KEYS: [&str; 5] = ["zero", "one", "wave", "bump", "mms_1"];
pub const CONTROL_KEYS: [&str; 4] = ["zero", "one", "wave", "mms_1"];
pub const INTEGRAND_KEYS: [&str; 2] = ["zero", "identity"];
pub const PRESETS: [&str; 1] = ["quadratic"];

fn unknown(kind: &str, key: &str, known: &[&str]) -> CliError {
    CliError::Config(format!("unknown {kind} '{key}' (known: {})", known.join(", ")))
}

fn require(kind: &str, key: &str, known: &[&str]) -> Result<(), CliError> {
    if known.contains(&key) {
        Ok(())
    } else {
        Err(unknown(kind, key, known))
    }
}

/// Registry keys and scalar parameters of the problem section.
pub fn check_problem(p: &ProblemConfig) -> Result<(), CliError> {
    require("preset", &p.preset, &PRESETS)?;
    require("boundary source", &p.phi, &PHI_KEYS)?;
    for key in [&p.target, &p.source, &p.initial] {
        require("field", key, &FIELD_KEYS)?;
    }
    require("control", &p.control, &CONTROL_KEYS)?;
    if !(p.beta.is_finite() && p.beta > 0.0) {
        return Err(CliError::Config(format!("beta must be positive, got {}", p.beta)));
    }
    if let Some(b) = &p.bounds {
        if b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper {
            return Err(CliError::Config(format!(
                "bounds must satisfy lower <= upper, got [{}, {}]",
                b.lower, b.upper
            )));
        }
    }
    let mut seen_inequality = false;
    for c in &p.constraints {
        match constraint_kind(c)? {
            ConstraintKind::Equality if seen_inequality => {
                return Err(CliError::Config("equality constraints must precede inequalities".into()))
            }
            ConstraintKind::Inequality => seen_inequality = true,
            ConstraintKind::Equality => {}
        }
        require("integrand", &c.volume, &INTEGRAND_KEYS)?;
        require("integrand", &c.surface, &INTEGRAND_KEYS)?;
        if !c.offset.is_finite() {
            return Err(CliError::Config("constraint offset must be finite".into()));
        }
    }
    Ok(())
}

fn constraint_kind(c: &ConstraintConfig) -> Result<ConstraintKind, CliError> {
    match c.kind.as_str() {
        "equality" => Ok(ConstraintKind::Equality),
        "inequality" => Ok(ConstraintKind::Inequality),
        other => Err(unknown("constraint kind", other, &["equality", "inequality"])),
    }
}

pub fn phi(key: &str, grid: &Grid) -> Result<Nonlinearity, CliError> {
    let term: Arc<dyn SurfaceTerm> = match key {
        "phi_identity" => Arc::new(IdentityControl),
        "phi_cubic" => Arc::new(CubicDamping),
        "phi_feedback" => Arc::new(LinearFeedback {
            sigma: BoundaryTrajectory::constant(grid, -1.0),
            theta: BoundaryTrajectory::zeros(grid),
        }),
        other => return Err(unknown("boundary source", other, &PHI_KEYS)),
    };
    Nonlinearity::new(term, grid, SampleRanges::default()).map_err(|e| CliError::Config(e.to_string()))
}

/// Which quantity a field key stands for; `mms_1` resolves differently per role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Target,
    Source,
    Initial,
}

pub fn field(key: &str, role: Role, grid: &Grid) -> Result<StateTrajectory, CliError> {
    let l = grid.domain.length;
    Ok(match key {
        "zero" => StateTrajectory::zeros(grid),
        "one" => StateTrajectory::constant(grid, 1.0),
        "wave" => StateTrajectory::from_fn(grid, |p| (2.0 * PI * p.x1 / l).cos() * p.x2 + p.t),
        "bump" => StateTrajectory::from_fn(grid, |p| (PI * p.x2).sin() * (1.0 - 0.5 * p.t)),
        "mms_1" => {
            let m = manufactured_solution(grid);
            match role {
                Role::Source => m.source,
                Role::Target | Role::Initial => m.exact,
            }
        }
        other => return Err(unknown("field", other, &FIELD_KEYS)),
    })
}

pub fn initial(key: &str, grid: &Grid) -> Result<Array2<f64>, CliError> {
    Ok(field(key, Role::Initial, grid)?.level(0).to_owned())
}

pub fn control(key: &str, grid: &Grid) -> Result<BoundaryTrajectory, CliError> {
    let l = grid.domain.length;
    Ok(match key {
        "zero" => BoundaryTrajectory::zeros(grid),
        "one" => BoundaryTrajectory::constant(grid, 1.0),
        "wave" => BoundaryTrajectory::from_fn(grid, |p| 0.4 * (2.0 * PI * p.x1 / l).cos() * (1.0 + p.t)),
        "mms_1" => manufactured_solution(grid).control,
        other => return Err(unknown("control", other, &CONTROL_KEYS)),
    })
}

fn volume_integrand(key: &str) -> Result<Arc<VolumeTerm>, CliError> {
    match key {
        "zero" => Ok(Arc::new(Zero)),
        "identity" => Ok(Arc::new(LinearState { weight: 1.0 })),
        other => Err(unknown("integrand", other, &INTEGRAND_KEYS)),
    }
}

fn surface_integrand(key: &str) -> Result<Arc<BoundaryStateTerm>, CliError> {
    match key {
        "zero" => Ok(Arc::new(Zero)),
        "identity" => Ok(Arc::new(LinearState { weight: 1.0 })),
        other => Err(unknown("integrand", other, &INTEGRAND_KEYS)),
    }
}

/// Assemble the problem, including bounds and constraints.
pub fn build_problem(p: &ProblemConfig, grid: &Grid) -> Result<ProblemSpec, CliError> {
    check_problem(p)?;
    let source = field(&p.source, Role::Source, grid)?;
    let target = field(&p.target, Role::Target, grid)?;
    let init = initial(&p.initial, grid)?;
    let problem = make_quadratic_problem(grid, source, init, QuadraticTrackingPreset { target, beta: p.beta })
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_nonlinearity(phi(&p.phi, grid)?);
    let problem = match &p.bounds {
        Some(b) => problem
            .with_bounds(ControlBounds::uniform(grid, b.lower, b.upper).map_err(|e| CliError::Config(e.to_string()))?)
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => problem,
    };
    if p.constraints.is_empty() {
        return Ok(problem);
    }
    let entries = p
        .constraints
        .iter()
        .map(|c| {
            Ok(Constraint {
                volume: volume_integrand(&c.volume)?,
                surface: surface_integrand(&c.surface)?,
                offset: c.offset,
                kind: constraint_kind(c)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let spec = ConstraintSpec::new(entries).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(problem.with_constraints(spec))
}

//! Run configuration, read from a TOML file with sections `domain`, `grid`,
//! `problem`, `solver`, `optimize` and `check`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use venttsel_core::{DomainSpec, Grid, NormalStencil, OptimizeOptions, SolverOptions};

use crate::error::CliError;
use crate::registry;

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub length: f64,
    pub final_time: f64,
    pub kappa: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            length: 1.0,
            final_time: 1.0,
            kappa: 1.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 32, ny: 9, nt: 64 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    /// `equality` or `inequality`.
    pub kind: String,
    /// Registry key of the volume integrand `a`.
    #[serde(default = "zero_key")]
    pub volume: String,
    /// Registry key of the boundary integrand `b`.
    #[serde(default = "zero_key")]
    pub surface: String,
    #[serde(default)]
    pub offset: f64,
}

fn zero_key() -> String {
    "zero".into()
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Objective preset; `quadratic` is the tracking functional.
    pub preset: String,
    /// Registry key of the boundary source.
    pub phi: String,
    pub beta: f64,
    pub target: String,
    pub source: String,
    pub initial: String,
    /// Control used by `solve`, `adjoint` and the derivative checks.
    pub control: String,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            preset: "quadratic".into(),
            phi: "phi_identity".into(),
            beta: 1.0,
            target: "zero".into(),
            source: "zero".into(),
            initial: "zero".into(),
            control: "zero".into(),
            bounds: None,
            constraints: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    /// `1` for the one-sided first-order normal derivative, `2` for second order.
    pub normal_stencil: u8,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            newton_tol: d.newton_tol,
            newton_max_iter: d.newton_max_iter,
            linear_tol: d.linear_tol,
            normal_stencil: 2,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub picard_damping: f64,
    pub al_penalty: f64,
    pub al_penalty_growth: f64,
    pub al_outer_iters: usize,
    pub al_feas_tol: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        let d = OptimizeOptions::default();
        Self {
            max_iter: d.max_iter,
            grad_tol: d.grad_tol,
            armijo_c: d.armijo_c,
            backtrack_factor: d.backtrack_factor,
            initial_step: d.initial_step,
            picard_damping: d.picard_damping,
            al_penalty: d.al_penalty,
            al_penalty_growth: d.al_penalty_growth,
            al_outer_iters: d.al_outer_iters,
            al_feas_tol: d.al_feas_tol,
        }
    }
}

/// Parameters of the verification commands.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Number of random directions.
    pub directions: usize,
    /// Finite-difference step.
    pub lambda: f64,
    /// Distance from the bounds defining the regularity mask.
    pub epsilon: f64,
    /// Grids `[nx, ny, nt]` of the refinement studies.
    pub refinements: Vec<[usize; 3]>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            directions: 5,
            lambda: 1e-4,
            epsilon: 1e-3,
            refinements: vec![[16, 5, 25], [32, 9, 100], [64, 17, 400]],
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        self.grid_with(self.grid.nx, self.grid.ny, self.grid.nt)
    }

    pub fn grid_with(&self, nx: usize, ny: usize, nt: usize) -> Result<Grid, CliError> {
        let d = &self.domain;
        let domain = DomainSpec::new(d.length, d.final_time, d.kappa).map_err(config)?;
        Grid::new(domain, nx, ny, nt).map_err(config)
    }

    pub fn solver_options(&self) -> Result<SolverOptions, CliError> {
        let s = &self.solver;
        let normal_stencil = match s.normal_stencil {
            1 => NormalStencil::FirstOrder,
            2 => NormalStencil::SecondOrder,
            other => return Err(CliError::Config(format!("normal_stencil must be 1 or 2, got {other}"))),
        };
        let opts = SolverOptions {
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            linear_tol: s.linear_tol,
            normal_stencil,
        };
        opts.validate().map_err(config)?;
        Ok(opts)
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions, CliError> {
        let o = &self.optimize;
        let opts = OptimizeOptions {
            max_iter: o.max_iter,
            grad_tol: o.grad_tol,
            armijo_c: o.armijo_c,
            backtrack_factor: o.backtrack_factor,
            initial_step: o.initial_step,
            picard_damping: o.picard_damping,
            al_penalty: o.al_penalty,
            al_penalty_growth: o.al_penalty_growth,
            al_outer_iters: o.al_outer_iters,
            al_feas_tol: o.al_feas_tol,
        };
        opts.validate().map_err(config)?;
        Ok(opts)
    }

    /// Check every field and registry key without running a solve.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.solver_options()?;
        self.optimize_options()?;
        let c = &self.check;
        if c.directions == 0 {
            return Err(CliError::Config("check.directions must be positive".into()));
        }
        if !(c.lambda.is_finite() && c.lambda > 0.0) {
            return Err(CliError::Config(format!("check.lambda must be positive, got {}", c.lambda)));
        }
        if !(c.epsilon.is_finite() && c.epsilon > 0.0) {
            return Err(CliError::Config(format!("check.epsilon must be positive, got {}", c.epsilon)));
        }
        for r in &c.refinements {
            self.grid_with(r[0], r[1], r[2])?;
        }
        registry::check_problem(&self.problem)
    }
}

fn config(e: venttsel_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

//! Optimizers and optimality checks: projected gradient under box bounds,
//! the Picard iteration for the quadratic tracking problem, an augmented
//! Lagrangian loop for integral state constraints, the second-order form
//! and the constraint regularity test.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::adjoint::{constraint_gradient, constraint_of_state, lagrangian_gradient_at, objective_gradient, second_form_with};
use crate::error::{Error, Result};
use crate::forward::{solve_linearized, solve_state, SolverOptions};
use crate::grid::BoundaryTrajectory;
use crate::model::{ConstraintKind, ControlBounds, ProblemSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Tolerance on the sup-norm of the projected gradient step.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Damping `omega` in `(0, 1]` for the Picard iteration.
    pub picard_damping: f64,
    pub al_penalty: f64,
    pub al_penalty_growth: f64,
    pub al_outer_iters: usize,
    pub al_feas_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            picard_damping: 1.0,
            al_penalty: 10.0,
            al_penalty_growth: 10.0,
            al_outer_iters: 20,
            al_feas_tol: 1e-8,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("armijo_c", self.armijo_c),
            ("backtrack_factor", self.backtrack_factor),
            ("initial_step", self.initial_step),
            ("picard_damping", self.picard_damping),
            ("al_penalty", self.al_penalty),
            ("al_penalty_growth", self.al_penalty_growth),
            ("al_feas_tol", self.al_feas_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        if self.max_iter == 0 || self.al_outer_iters == 0 {
            return Err(Error::InvalidParameter("iteration limits must be positive".into()));
        }
        if self.picard_damping > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "picard_damping must be at most 1, got {}",
                self.picard_damping
            )));
        }
        if self.backtrack_factor >= 1.0 || self.armijo_c >= 1.0 {
            return Err(Error::InvalidParameter(
                "backtrack_factor and armijo_c must be below 1".into(),
            ));
        }
        Ok(())
    }
}

const MAX_BACKTRACKS: usize = 60;

/// One accepted iteration of a descent or fixed-point method.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    /// Projected-gradient residual (descent) or fixed-point residual (Picard) before the step.
    pub residual: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub control: BoundaryTrajectory,
    pub value: f64,
    pub gradient: BoundaryTrajectory,
    /// `|| u - clip(u - grad) ||_inf` at the returned control.
    pub stationarity: f64,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

fn projected_residual(u: &BoundaryTrajectory, gradient: &BoundaryTrajectory, bounds: &ControlBounds) -> f64 {
    let trial = bounds.project(&u.add_scaled(-1.0, gradient));
    u.add_scaled(-1.0, &trial).max_abs()
}

/// Projected gradient with Armijo backtracking on a smooth functional given
/// by `eval(u) -> (value, gradient)` and `value(u)`. The first trial step is
/// `initial_step`; later ones use the Barzilai-Borwein length of the previous step.
fn projected_descent(
    bounds: &ControlBounds,
    u0: &BoundaryTrajectory,
    opts: &OptimizeOptions,
    mut eval: impl FnMut(&BoundaryTrajectory) -> Result<(f64, BoundaryTrajectory)>,
    mut value: impl FnMut(&BoundaryTrajectory) -> Result<f64>,
) -> Result<DescentResult> {
    let grid = u0.grid().clone();
    let mut u = bounds.project(u0);
    let (mut j, mut gradient) = eval(&u)?;
    let mut history = Vec::new();
    let mut trial_step = opts.initial_step;
    for iteration in 0..opts.max_iter {
        let residual = projected_residual(&u, &gradient, bounds);
        if residual <= opts.grad_tol {
            return Ok(DescentResult {
                control: u,
                value: j,
                gradient,
                stationarity: residual,
                converged: true,
                history,
            });
        }
        let mut alpha = trial_step;
        let mut backtracks = 0;
        loop {
            let trial = bounds.project(&u.add_scaled(-alpha, &gradient));
            let step = trial.add_scaled(-1.0, &u);
            let decrease = opts.armijo_c / alpha * grid.inner_sigma(&step, &step)?;
            let jt = value(&trial)?;
            if jt <= j - decrease {
                history.push(IterationRecord {
                    iteration,
                    value: jt,
                    residual,
                    step: alpha,
                    backtracks,
                });
                let (jn, gn) = eval(&trial)?;
                let dg = gn.add_scaled(-1.0, &gradient);
                let curvature = grid.inner_sigma(&step, &dg)?;
                let length = grid.inner_sigma(&step, &step)?;
                // Barzilai-Borwein trial step for the next iteration.
                trial_step = if curvature > 0.0 {
                    (length / curvature).clamp(1e-10 * opts.initial_step, 1e10 * opts.initial_step)
                } else {
                    opts.initial_step
                };
                u = trial;
                j = jn;
                gradient = gn;
                break;
            }
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::LineSearchFailure { iteration, backtracks: MAX_BACKTRACKS });
            }
            alpha *= opts.backtrack_factor;
        }
    }
    let stationarity = projected_residual(&u, &gradient, bounds);
    Ok(DescentResult {
        control: u,
        value: j,
        gradient,
        converged: stationarity <= opts.grad_tol,
        stationarity,
        history,
    })
}

/// Minimize `J_h` over `bounds` by projected gradient. The result reports
/// `converged = false` when `max_iter` is reached first.
pub fn projected_gradient(
    problem: &ProblemSpec,
    bounds: &ControlBounds,
    u0: &BoundaryTrajectory,
    solver: &SolverOptions,
    opts: &OptimizeOptions,
) -> Result<DescentResult> {
    opts.validate()?;
    u0.check_grid(&problem.grid)?;
    bounds.lower.check_grid(&problem.grid)?;
    bounds.upper.check_grid(&problem.grid)?;
    projected_descent(
        bounds,
        u0,
        opts,
        |u| {
            let r = objective_gradient(problem, u, solver)?;
            Ok((r.value, r.gradient))
        },
        |u| crate::adjoint::objective_value(problem, u, solver),
    )
}

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub control: BoundaryTrajectory,
    pub state: crate::grid::StateTrajectory,
    /// Boundary adjoint `w` with `beta u = w` at the fixed point.
    pub adjoint: BoundaryTrajectory,
    /// `|| beta u - w ||_inf` at the returned control.
    pub residual: f64,
    pub history: Vec<IterationRecord>,
}

/// Damped fixed-point iteration `u <- (1 - omega) u + (omega / beta) w(u)`
/// for a problem built by [`crate::make_quadratic_problem`] with the given `beta`.
pub fn picard_optimality_system(
    problem: &ProblemSpec,
    beta: f64,
    u0: &BoundaryTrajectory,
    solver: &SolverOptions,
    opts: &OptimizeOptions,
) -> Result<PicardResult> {
    opts.validate()?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if problem.bounds.is_some() {
        return Err(Error::InvalidParameter(
            "the Picard iteration applies to the problem without control bounds".into(),
        ));
    }
    u0.check_grid(&problem.grid)?;
    let omega = opts.picard_damping;
    let mut u = u0.clone();
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for iteration in 0..=opts.max_iter {
        let report = objective_gradient(problem, &u, solver)?;
        let w = report.boundary_adjoint;
        residual = u.scale(beta).add_scaled(-1.0, &w).max_abs();
        if residual <= opts.grad_tol * beta {
            return Ok(PicardResult {
                control: u,
                state: report.state,
                adjoint: w,
                residual,
                history,
            });
        }
        if iteration == opts.max_iter {
            break;
        }
        history.push(IterationRecord {
            iteration,
            value: report.value,
            residual,
            step: omega,
            backtracks: 0,
        });
        u = u.scale(1.0 - omega).add_scaled(omega / beta, &w);
    }
    Err(Error::NonConvergence {
        method: "Picard iteration",
        iterations: opts.max_iter,
        residual,
    })
}

/// Multipliers and residuals of the first-order system with constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct KktReport {
    pub multipliers: Vec<f64>,
    /// Projected-gradient residual of the Lagrangian gradient.
    pub stationarity: f64,
    /// `|F_i|` for equalities, `max(0, F_i)` for inequalities.
    pub feasibility: Vec<f64>,
    /// `|lambda_i F_i|` for inequalities, zero for equalities.
    pub complementarity: Vec<f64>,
    /// Indices with `|F_i| <= al_feas_tol`; equalities are always included.
    pub active: Vec<usize>,
    pub constraint_values: Vec<f64>,
    pub objective: f64,
    pub penalty: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

impl KktReport {
    pub fn max_infeasibility(&self) -> f64 {
        self.feasibility.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_complementarity(&self) -> f64 {
        self.complementarity.iter().copied().fold(0.0, f64::max)
    }
}

/// Best iterate and its report when the augmented Lagrangian loop stops unconverged.
#[derive(Clone, Debug, PartialEq)]
pub struct KktFailure {
    pub control: BoundaryTrajectory,
    pub report: KktReport,
}

#[derive(Clone, Debug)]
pub struct KktResult {
    pub control: BoundaryTrajectory,
    pub report: KktReport,
}

fn kinds(problem: &ProblemSpec) -> Vec<ConstraintKind> {
    problem
        .constraints
        .as_ref()
        .map(|c| c.iter().map(|e| e.kind).collect())
        .unwrap_or_default()
}

/// Multipliers of the augmented Lagrangian gradient at constraint values `f`.
fn shifted_multipliers(kinds: &[ConstraintKind], lambda: &[f64], f: &[f64], rho: f64) -> Vec<f64> {
    kinds
        .iter()
        .zip(lambda.iter().zip(f))
        .map(|(k, (&l, &fi))| match k {
            ConstraintKind::Equality => l + rho * fi,
            ConstraintKind::Inequality => (l + rho * fi).max(0.0),
        })
        .collect()
}

fn augmented_value(kinds: &[ConstraintKind], lambda: &[f64], f: &[f64], rho: f64) -> f64 {
    kinds
        .iter()
        .zip(lambda.iter().zip(f))
        .map(|(k, (&l, &fi))| match k {
            ConstraintKind::Equality => l * fi + 0.5 * rho * fi * fi,
            ConstraintKind::Inequality => {
                let s = (l + rho * fi).max(0.0);
                (s * s - l * l) / (2.0 * rho)
            }
        })
        .sum()
}

fn kkt_report(
    problem: &ProblemSpec,
    bounds: &ControlBounds,
    u: &BoundaryTrajectory,
    lambda: &[f64],
    solver: &SolverOptions,
    opts: &OptimizeOptions,
) -> Result<KktReport> {
    let kinds = kinds(problem);
    let state = solve_state(problem, u, solver)?;
    let s = lagrangian_gradient_at(problem, &state, u, 1.0, lambda, solver)?;
    let mut feasibility = Vec::with_capacity(kinds.len());
    let mut complementarity = Vec::with_capacity(kinds.len());
    let mut active = Vec::new();
    for (i, (k, &fi)) in kinds.iter().zip(&s.constraints).enumerate() {
        match k {
            ConstraintKind::Equality => {
                feasibility.push(fi.abs());
                complementarity.push(0.0);
                active.push(i);
            }
            ConstraintKind::Inequality => {
                feasibility.push(fi.max(0.0));
                complementarity.push((lambda[i] * fi).abs());
                if fi.abs() <= opts.al_feas_tol {
                    active.push(i);
                }
            }
        }
    }
    Ok(KktReport {
        multipliers: lambda.to_vec(),
        stationarity: projected_residual(u, &s.gradient, bounds),
        feasibility,
        complementarity,
        active,
        constraint_values: s.constraints,
        objective: s.objective,
        penalty: 0.0,
        outer_iterations: 0,
        inner_iterations: 0,
    })
}

/// Augmented Lagrangian method for `min J` subject to the problem's integral
/// constraints and `bounds`. Equality multipliers are updated by
/// `lambda + rho F`, inequality multipliers by `max(0, lambda + rho F)`, and the
/// penalty grows only when the infeasibility fails to drop by a factor of four.
pub fn augmented_lagrangian(
    problem: &ProblemSpec,
    bounds: &ControlBounds,
    u0: &BoundaryTrajectory,
    solver: &SolverOptions,
    opts: &OptimizeOptions,
) -> std::result::Result<KktResult, Error> {
    opts.validate()?;
    let m = problem.constraint_count();
    if m == 0 {
        return Err(Error::InvalidParameter("augmented Lagrangian needs at least one constraint".into()));
    }
    u0.check_grid(&problem.grid)?;
    let kinds = kinds(problem);
    let mut lambda = vec![0.0; m];
    let mut rho = opts.al_penalty;
    let mut u = bounds.project(u0);
    let mut previous = f64::INFINITY;
    let mut inner_total = 0;
    let mut best: Option<(f64, KktFailure)> = None;

    for outer in 0..opts.al_outer_iters {
        let (lam, r) = (lambda.clone(), rho);
        let constraint_values = |state: &crate::grid::StateTrajectory| -> Result<Vec<f64>> {
            (0..m).map(|i| constraint_of_state(problem, state, i)).collect()
        };
        let inner = projected_descent(
            bounds,
            &u,
            opts,
            |v| {
                let state = solve_state(problem, v, solver)?;
                let f = constraint_values(&state)?;
                let mu = shifted_multipliers(&kinds, &lam, &f, r);
                let s = lagrangian_gradient_at(problem, &state, v, 1.0, &mu, solver)?;
                Ok((s.objective + augmented_value(&kinds, &lam, &f, r), s.gradient))
            },
            |v| {
                let state = solve_state(problem, v, solver)?;
                let f = constraint_values(&state)?;
                Ok(crate::adjoint::objective_of_state(problem, &state, v)
                    + augmented_value(&kinds, &lam, &f, r))
            },
        )?;
        inner_total += inner.history.len();
        u = inner.control;

        let state = solve_state(problem, &u, solver)?;
        let f = constraint_values(&state)?;
        lambda = shifted_multipliers(&kinds, &lambda, &f, rho);

        let mut report = kkt_report(problem, bounds, &u, &lambda, solver, opts)?;
        report.penalty = rho;
        report.outer_iterations = outer + 1;
        report.inner_iterations = inner_total;
        let infeasibility = report.max_infeasibility();
        let converged = inner.converged
            && infeasibility <= opts.al_feas_tol
            && report.stationarity <= 10.0 * opts.grad_tol
            && report.max_complementarity() <= opts.al_feas_tol;
        if converged {
            return Ok(KktResult { control: u, report });
        }
        let merit = infeasibility + report.stationarity + report.max_complementarity();
        if best.as_ref().map_or(true, |(b, _)| merit < *b) {
            best = Some((merit, KktFailure { control: u.clone(), report }));
        }
        if infeasibility > 0.25 * previous {
            rho *= opts.al_penalty_growth;
        }
        previous = infeasibility;
    }
    let (_, failure) = best.expect("at least one outer iteration ran");
    Err(Error::KktNonConvergence(Box::new(failure)))
}

/// The quadratic form of the second-order necessary condition along `v`,
/// given the boundary adjoint `w` at `u`.
pub fn check_second_order(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    v: &BoundaryTrajectory,
    w: &BoundaryTrajectory,
    solver: &SolverOptions,
) -> Result<f64> {
    for field in [u, v, w] {
        field.check_grid(&problem.grid)?;
    }
    let state = solve_state(problem, u, solver)?;
    let z = solve_linearized(problem, &state, u, v, solver)?;
    Ok(second_form_with(problem, &state, u, w, v, v, &z, &z))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    pub regular: bool,
    /// Constraint indices entering the Gram matrix.
    pub active: Vec<usize>,
    /// `M[a][b] = <F_i', h_j>` with `h_j` the gradient of `F_j` restricted to the mask.
    pub gram: Vec<Vec<f64>>,
    pub condition: f64,
    /// `true` at nodes with `u_a + eps <= u <= u_b - eps`.
    pub mask: Vec<bool>,
}

pub const MAX_GRAM_CONDITION: f64 = 1e8;

/// Test the regularity of the active constraints at `u`: the gradients,
/// restricted to the nodes at least `epsilon` away from the bounds, must have
/// a well-conditioned Gram matrix.
pub fn check_regularity(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    epsilon: f64,
    solver: &SolverOptions,
    opts: &OptimizeOptions,
) -> Result<RegularityReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    u.check_grid(&problem.grid)?;
    let grid = &problem.grid;
    let unbounded = ControlBounds::unbounded(grid);
    let bounds = problem.bounds.as_ref().unwrap_or(&unbounded);
    let mask: Vec<bool> = ndarray::Zip::from(u.values())
        .and(bounds.lower.values())
        .and(bounds.upper.values())
        .map_collect(|&x, &lo, &hi| lo + epsilon <= x && x <= hi - epsilon)
        .into_iter()
        .collect();

    let state = solve_state(problem, u, solver)?;
    let kinds = kinds(problem);
    let mut active = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        let fi = constraint_of_state(problem, &state, i)?;
        if *k == ConstraintKind::Equality || fi.abs() <= opts.al_feas_tol {
            active.push(i);
        }
    }
    if active.is_empty() {
        return Ok(RegularityReport {
            regular: true,
            active,
            gram: Vec::new(),
            condition: 1.0,
            mask,
        });
    }
    let gradients: Vec<BoundaryTrajectory> = active
        .iter()
        .map(|&i| constraint_gradient(problem, u, i, solver))
        .collect::<Result<_>>()?;
    let masked: Vec<BoundaryTrajectory> = gradients
        .iter()
        .map(|g| {
            let mut h = g.clone();
            for (v, &keep) in h.values_mut().iter_mut().zip(&mask) {
                if !keep {
                    *v = 0.0;
                }
            }
            h
        })
        .collect();
    let k = active.len();
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            gram[(a, b)] = grid.inner_sigma(&gradients[a], &masked[b])?;
        }
    }
    let eigen = SymmetricEigen::new(gram.clone());
    let magnitudes: Vec<f64> = eigen.eigenvalues.iter().map(|e| e.abs()).collect();
    let largest = magnitudes.iter().copied().fold(0.0, f64::max);
    let smallest = magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    Ok(RegularityReport {
        regular: largest > 0.0 && condition <= MAX_GRAM_CONDITION,
        active,
        gram: (0..k).map(|a| (0..k).map(|b| gram[(a, b)]).collect()).collect(),
        condition,
        mask,
    })
}

//! The subcommands. Each returns a JSON report plus the fields to write.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use venttsel_core::random::{random_adjoint_data, random_direction, random_principal_data};
use venttsel_core::{
    augmented_lagrangian, check_regularity, check_second_order, duality_gap, make_quadratic_problem,
    manufactured_solution, objective_gradient, objective_second_form, objective_value,
    picard_optimality_system, projected_gradient, solve_state, BoundaryTrajectory, ControlBounds,
    Error, Grid, KktReport, Nonlinearity, OptimizeOptions, ProblemSpec, QuadraticTrackingPreset,
    SampleRanges, SolverOptions, StateTrajectory,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::registry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Adjoint,
    DualityCheck,
    GradCheck,
    HessCheck,
    MmsConvergence,
    OptimizeBox,
    OptimizePicard,
    OptimizeKkt,
    SecondOrderCheck,
    RegularityCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Adjoint => "adjoint",
            Command::DualityCheck => "duality-check",
            Command::GradCheck => "grad-check",
            Command::HessCheck => "hess-check",
            Command::MmsConvergence => "mms-convergence",
            Command::OptimizeBox => "optimize-box",
            Command::OptimizePicard => "optimize-picard",
            Command::OptimizeKkt => "optimize-kkt",
            Command::SecondOrderCheck => "second-order-check",
            Command::RegularityCheck => "regularity-check",
        }
    }

    /// Requirements a command places on the configuration beyond [`RunConfig::validate`].
    pub fn check_config(self, config: &RunConfig) -> Result<(), CliError> {
        let p = &config.problem;
        match self {
            Command::OptimizeBox if p.bounds.is_none() => {
                Err(CliError::Config("optimize-box needs problem.bounds".into()))
            }
            Command::OptimizePicard if p.phi != "phi_identity" || p.bounds.is_some() => Err(CliError::Config(
                "optimize-picard needs phi = \"phi_identity\" and no bounds".into(),
            )),
            Command::OptimizeKkt if p.constraints.is_empty() => {
                Err(CliError::Config("optimize-kkt needs at least one constraint".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Everything a command needs, resolved from the configuration and flags.
pub struct Context {
    pub config: RunConfig,
    pub grid: Grid,
    pub solver: SolverOptions,
    pub optimize: OptimizeOptions,
    pub seed: u64,
}

impl Context {
    pub fn new(config: RunConfig, seed: u64) -> Result<Self, CliError> {
        config.validate()?;
        Ok(Self {
            grid: config.grid()?,
            solver: config.solver_options()?,
            optimize: config.optimize_options()?,
            config,
            seed,
        })
    }

    fn problem(&self) -> Result<ProblemSpec, CliError> {
        registry::build_problem(&self.config.problem, &self.grid)
    }

    fn control(&self) -> Result<BoundaryTrajectory, CliError> {
        registry::control(&self.config.problem.control, &self.grid)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn bounds(&self, problem: &ProblemSpec) -> ControlBounds {
        problem
            .bounds
            .clone()
            .unwrap_or_else(|| ControlBounds::unbounded(&self.grid))
    }

    fn grid_json(&self) -> Value {
        let g = &self.grid;
        json!({
            "length": g.domain.length,
            "final_time": g.domain.final_time,
            "kappa": g.domain.kappa,
            "nx": g.nx,
            "ny": g.ny,
            "nt": g.nt,
        })
    }
}

pub enum Field {
    State(StateTrajectory),
    Boundary(BoundaryTrajectory),
}

pub struct Outcome {
    pub report: Value,
    /// Named outputs; `state` and `control` become `state.csv` and `control.csv`.
    pub fields: Vec<(&'static str, Field)>,
    /// Set when the run produced outputs but the method did not succeed.
    pub failure: Option<String>,
}

impl Outcome {
    fn new(report: Value) -> Self {
        Self {
            report,
            fields: Vec::new(),
            failure: None,
        }
    }

    fn state(mut self, name: &'static str, field: StateTrajectory) -> Self {
        self.fields.push((name, Field::State(field)));
        self
    }

    fn boundary(mut self, name: &'static str, field: BoundaryTrajectory) -> Self {
        self.fields.push((name, Field::Boundary(field)));
        self
    }
}

pub fn run(command: Command, ctx: &Context) -> Result<Outcome, CliError> {
    let mut outcome = match command {
        Command::Solve => solve(ctx),
        Command::Adjoint => adjoint(ctx),
        Command::DualityCheck => duality(ctx),
        Command::GradCheck => grad_check(ctx),
        Command::HessCheck => hess_check(ctx),
        Command::MmsConvergence => mms(ctx),
        Command::OptimizeBox => optimize_box(ctx),
        Command::OptimizePicard => optimize_picard(ctx),
        Command::OptimizeKkt => optimize_kkt(ctx),
        Command::SecondOrderCheck => second_order(ctx),
        Command::RegularityCheck => regularity(ctx),
    }?;
    if let Value::Object(map) = &mut outcome.report {
        map.insert("command".into(), json!(command.name()));
        map.insert("grid".into(), ctx.grid_json());
        map.insert("seed".into(), json!(ctx.seed));
    }
    Ok(outcome)
}

fn solve(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let u = ctx.control()?;
    let y = solve_state(&problem, &u, &ctx.solver)?;
    let report = json!({
        "state_max_abs": y.max_abs(),
        "final_max_abs": y.max_abs_at(ctx.grid.nt),
        "objective": venttsel_core::adjoint::objective_of_state(&problem, &y, &u),
    });
    Ok(Outcome::new(report).state("state", y).boundary("control", u))
}

fn adjoint(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let u = ctx.control()?;
    let r = objective_gradient(&problem, &u, &ctx.solver)?;
    let report = json!({
        "objective": r.value,
        "gradient_max_abs": r.gradient.max_abs(),
        "gradient_norm": ctx.grid.norm_sigma(&r.gradient)?,
        "adjoint_max_abs": r.adjoint.max_abs(),
    });
    Ok(Outcome::new(report)
        .state("state", r.state)
        .state("adjoint", r.adjoint)
        .boundary("control", u)
        .boundary("gradient", r.gradient))
}

/// Grid with `hx`, `hy` halved and `dt` divided by four.
pub fn refined(grid: &Grid) -> Result<Grid, venttsel_core::Error> {
    Grid::new(grid.domain, 2 * grid.nx, 2 * (grid.ny - 1) + 1, 4 * grid.nt)
}

/// Relative duality gaps on `grid` and its refinement for each random sample.
pub fn duality_samples(
    grid: &Grid,
    seed: u64,
    samples: usize,
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>, venttsel_core::Error> {
    let fine = refined(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let start = rng.clone();
        let mut gaps = [0.0; 2];
        for (k, g) in [grid, &fine].into_iter().enumerate() {
            rng = start.clone();
            let principal = random_principal_data(g, &mut rng);
            let adjoint = random_adjoint_data(g, &mut rng);
            gaps[k] = duality_gap(g, &principal, &adjoint, opts)?.relative();
        }
        out.push((gaps[0], gaps[1]));
    }
    Ok(out)
}

pub const DUALITY_TOL: f64 = 1e-3;
pub const DUALITY_REFINEMENT: f64 = 2.0;

fn duality(ctx: &Context) -> Result<Outcome, CliError> {
    let samples = duality_samples(&ctx.grid, ctx.seed, ctx.config.check.directions, &ctx.solver)?;
    let worst = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let min_ratio = samples.iter().map(|s| s.0 / s.1).fold(f64::INFINITY, f64::min);
    let report = json!({
        "relative_gap": samples.iter().map(|s| s.0).collect::<Vec<_>>(),
        "relative_gap_refined": samples.iter().map(|s| s.1).collect::<Vec<_>>(),
        "worst_relative_gap": worst,
        "min_refinement_ratio": min_ratio,
        "tolerance": DUALITY_TOL,
        "passed": worst <= DUALITY_TOL && min_ratio >= DUALITY_REFINEMENT,
    });
    Ok(Outcome::new(report))
}

/// Relative errors between `<grad J, v>` and central differences of `J` for random unit directions.
pub fn gradient_errors(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    directions: usize,
    lambda: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(BoundaryTrajectory, Vec<f64>), venttsel_core::Error> {
    let g = &problem.grid;
    let r = objective_gradient(problem, u, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(directions);
    for _ in 0..directions {
        let v = random_direction(g, &mut rng);
        let jp = objective_value(problem, &u.add_scaled(lambda, &v), opts)?;
        let jm = objective_value(problem, &u.add_scaled(-lambda, &v), opts)?;
        let fd = (jp - jm) / (2.0 * lambda);
        let exact = g.inner_sigma(&r.gradient, &v)?;
        errors.push((fd - exact).abs() / exact.abs());
    }
    Ok((r.gradient, errors))
}

fn grad_check(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let u = ctx.control()?;
    let c = &ctx.config.check;
    let (gradient, errors) = gradient_errors(&problem, &u, c.directions, c.lambda, ctx.seed, &ctx.solver)?;
    let tol = if ctx.config.problem.phi == "phi_identity" { 1e-6 } else { 1e-5 };
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let report = json!({
        "relative_errors": errors,
        "max_relative_error": worst,
        "tolerance": tol,
        "lambda": c.lambda,
        "passed": worst <= tol,
    });
    Ok(Outcome::new(report).boundary("control", gradient))
}

fn hess_check(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let g = &ctx.grid;
    let u = ctx.control()?;
    let lambda = ctx.config.check.lambda;
    let mut rng = ctx.rng();
    let j0 = objective_value(&problem, &u, &ctx.solver)?;
    let mut symmetry = Vec::new();
    let mut diagonal = Vec::new();
    let mut second_difference = Vec::new();
    for _ in 0..ctx.config.check.directions {
        let v1 = random_direction(g, &mut rng);
        let v2 = random_direction(g, &mut rng);
        let a = objective_second_form(&problem, &u, &v1, &v2, &ctx.solver)?;
        let b = objective_second_form(&problem, &u, &v2, &v1, &ctx.solver)?;
        symmetry.push((a - b).abs() / (1.0 + a.abs().max(b.abs())));
        let q = objective_second_form(&problem, &u, &v1, &v1, &ctx.solver)?;
        diagonal.push(q);
        let mut errs = [0.0; 2];
        for (k, l) in [lambda, 0.5 * lambda].into_iter().enumerate() {
            let jp = objective_value(&problem, &u.add_scaled(l, &v1), &ctx.solver)?;
            let jm = objective_value(&problem, &u.add_scaled(-l, &v1), &ctx.solver)?;
            errs[k] = ((jp - 2.0 * j0 + jm) / (l * l) - q).abs();
        }
        second_difference.push(errs);
    }
    let report = json!({
        "symmetry_defect": symmetry,
        "max_symmetry_defect": symmetry.iter().copied().fold(0.0, f64::max),
        "form_on_diagonal": diagonal,
        "min_form_on_diagonal": diagonal.iter().copied().fold(f64::INFINITY, f64::min),
        "second_difference_error": second_difference,
        "lambda": lambda,
    });
    Ok(Outcome::new(report))
}

/// Sup-norm errors of the manufactured solution on each grid and the observed orders in `dt`.
pub fn mms_study(
    config: &RunConfig,
    refinements: &[[usize; 3]],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut errors = Vec::new();
    let mut steps = Vec::new();
    for r in refinements {
        let g = config.grid_with(r[0], r[1], r[2])?;
        let m = manufactured_solution(&g);
        let problem = make_quadratic_problem(
            &g,
            m.source.clone(),
            m.initial.clone(),
            QuadraticTrackingPreset {
                target: StateTrajectory::zeros(&g),
                beta: 1.0,
            },
        )?
        .with_nonlinearity(Nonlinearity::new(
            std::sync::Arc::new(venttsel_core::model::presets::IdentityControl),
            &g,
            SampleRanges::default(),
        )?);
        let y = solve_state(&problem, &m.control, opts)?;
        let err = (y.values() - m.exact.values()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        errors.push(err);
        steps.push(g.dt);
    }
    let orders = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, d)| (e[0] / e[1]).ln() / (d[0] / d[1]).ln())
        .collect();
    Ok((errors, orders))
}

fn mms(ctx: &Context) -> Result<Outcome, CliError> {
    let (errors, orders) = mms_study(&ctx.config, &ctx.config.check.refinements, &ctx.solver)?;
    let passed = orders.iter().all(|o| (0.8..=1.2).contains(o));
    let report = json!({
        "refinements": ctx.config.check.refinements,
        "max_errors": errors,
        "orders": orders,
        "passed": passed,
    });
    Ok(Outcome::new(report))
}

/// Largest violations of the pointwise first-order conditions under `bounds`.
pub fn pointwise_kkt(u: &BoundaryTrajectory, gradient: &BoundaryTrajectory, bounds: &ControlBounds) -> [f64; 3] {
    let mut worst = [0.0f64; 3];
    for (((&x, &gr), &lo), &hi) in u
        .values()
        .iter()
        .zip(gradient.values())
        .zip(bounds.lower.values())
        .zip(bounds.upper.values())
    {
        if x <= lo {
            worst[1] = worst[1].max(-gr);
        } else if x >= hi {
            worst[2] = worst[2].max(gr);
        } else {
            worst[0] = worst[0].max(gr.abs());
        }
    }
    worst
}

/// `min_v <grad, v - u> / ||v - u||` over random feasible `v`.
pub fn variational_inequality(
    u: &BoundaryTrajectory,
    gradient: &BoundaryTrajectory,
    bounds: &ControlBounds,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, venttsel_core::Error> {
    let g = u.grid();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let raw = random_direction(g, rng).scale(2.0 * u.max_abs().max(1.0));
        let v = bounds.project(&raw);
        let d = v.add_scaled(-1.0, u);
        let norm = g.norm_sigma(&d)?;
        if norm > 0.0 {
            worst = worst.min(g.inner_sigma(gradient, &d)? / norm);
        }
    }
    Ok(worst)
}

fn optimize_box(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let bounds = ctx.bounds(&problem);
    let r = projected_gradient(&problem, &bounds, &ctx.control()?, &ctx.solver, &ctx.optimize)?;
    let kkt = pointwise_kkt(&r.control, &r.gradient, &bounds);
    let vi = variational_inequality(&r.control, &r.gradient, &bounds, 20, &mut ctx.rng())?;
    let tol = 10.0 * ctx.optimize.grad_tol;
    let report = json!({
        "objective": r.value,
        "iterations": r.history.len(),
        "stationarity": r.stationarity,
        "converged": r.converged,
        "interior_gradient": kkt[0],
        "lower_violation": kkt[1],
        "upper_violation": kkt[2],
        "variational_inequality_min": vi,
        "passed": r.converged && kkt.iter().all(|&k| k <= tol) && vi >= -tol,
        "history": r.history.iter().map(|h| json!([h.iteration, h.value, h.residual, h.step, h.backtracks])).collect::<Vec<_>>(),
    });
    let mut out = Outcome::new(report).boundary("control", r.control).boundary("gradient", r.gradient);
    if !r.converged {
        out.failure = Some("projected gradient reached max_iter".into());
    }
    Ok(out)
}

fn optimize_picard(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let beta = ctx.config.problem.beta;
    let u0 = ctx.control()?;
    let pic = picard_optimality_system(&problem, beta, &u0, &ctx.solver, &ctx.optimize)?;
    let pg = projected_gradient(&problem, &ControlBounds::unbounded(&ctx.grid), &u0, &ctx.solver, &ctx.optimize)?;
    let scale = 1.0 + pic.control.max_abs();
    let certificate = pic.control.scale(beta).add_scaled(-1.0, &pic.adjoint).max_abs() / scale;
    let agreement = pic.control.add_scaled(-1.0, &pg.control).max_abs() / scale;
    let report = json!({
        "iterations": pic.history.len(),
        "residual": pic.residual,
        "optimality_certificate": certificate,
        "agreement_with_projected_gradient": agreement,
        "projected_gradient_converged": pg.converged,
        "passed": certificate <= 1e-6 && agreement <= 1e-5,
    });
    Ok(Outcome::new(report)
        .state("state", pic.state)
        .boundary("control", pic.control)
        .boundary("adjoint", pic.adjoint))
}

fn kkt_json(r: &KktReport) -> Value {
    json!({
        "multipliers": r.multipliers,
        "stationarity": r.stationarity,
        "feasibility": r.feasibility,
        "complementarity": r.complementarity,
        "active": r.active,
        "constraint_values": r.constraint_values,
        "objective": r.objective,
        "penalty": r.penalty,
        "outer_iterations": r.outer_iterations,
        "inner_iterations": r.inner_iterations,
    })
}

fn optimize_kkt(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let bounds = ctx.bounds(&problem);
    match augmented_lagrangian(&problem, &bounds, &ctx.control()?, &ctx.solver, &ctx.optimize) {
        Ok(r) => Ok(Outcome::new(json!({ "converged": true, "kkt": kkt_json(&r.report) })).boundary("control", r.control)),
        Err(Error::KktNonConvergence(f)) => {
            let mut out = Outcome::new(json!({ "converged": false, "kkt": kkt_json(&f.report) }))
                .boundary("control", f.control.clone());
            out.failure = Some(Error::KktNonConvergence(f).to_string());
            Ok(out)
        }
        Err(e) => Err(e.into()),
    }
}

fn second_order(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let bounds = ctx.bounds(&problem);
    let r = projected_gradient(&problem, &bounds, &ctx.control()?, &ctx.solver, &ctx.optimize)?;
    let w = objective_gradient(&problem, &r.control, &ctx.solver)?.boundary_adjoint;
    let mut rng = ctx.rng();
    let mut values = Vec::new();
    let mut defects = Vec::new();
    for _ in 0..ctx.config.check.directions {
        let v = random_direction(&ctx.grid, &mut rng);
        let q = check_second_order(&problem, &r.control, &v, &w, &ctx.solver)?;
        let reference = objective_second_form(&problem, &r.control, &v, &v, &ctx.solver)?;
        defects.push((q - reference).abs() / (1.0 + reference.abs()));
        values.push(q);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let report = json!({
        "optimizer_converged": r.converged,
        "form_values": values,
        "min_form_value": min,
        "max_defect_vs_second_form": defects.iter().copied().fold(0.0, f64::max),
        "passed": r.converged && min >= 0.0,
    });
    Ok(Outcome::new(report).boundary("control", r.control))
}

fn regularity(ctx: &Context) -> Result<Outcome, CliError> {
    let problem = ctx.problem()?;
    let bounds = ctx.bounds(&problem);
    let (u, converged) = if problem.constraint_count() > 0 {
        match augmented_lagrangian(&problem, &bounds, &ctx.control()?, &ctx.solver, &ctx.optimize) {
            Ok(r) => (r.control, true),
            Err(Error::KktNonConvergence(f)) => (f.control, false),
            Err(e) => return Err(e.into()),
        }
    } else {
        (ctx.control()?, true)
    };
    let r = check_regularity(&problem, &u, ctx.config.check.epsilon, &ctx.solver, &ctx.optimize)?;
    let report = json!({
        "optimizer_converged": converged,
        "regular": r.regular,
        "active": r.active,
        "gram": r.gram,
        "condition": r.condition,
        "mask_nodes": r.mask.iter().filter(|&&m| m).count(),
        "total_nodes": r.mask.len(),
        "epsilon": ctx.config.check.epsilon,
    });
    Ok(Outcome::new(report).boundary("control", u))
}

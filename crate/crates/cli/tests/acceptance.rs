//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test -p venttsel-cli --test acceptance -- --nocapture --test-threads=1`.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use venttsel_core::model::presets::{CubicDamping, LinearFeedback, LinearState, Zero};
use venttsel_core::random::{random_adjoint_data, random_direction, random_principal_data};
use venttsel_core::*;

fn report(n: usize, name: &str, passed: bool, detail: String) {
    println!("criterion {n:>2} ({name}): {} | {detail}", if passed { "PASS" } else { "FAIL" });
}

fn grid(l: f64, nx: usize, ny: usize, nt: usize) -> Grid {
    Grid::new(DomainSpec::new(l, 1.0, 1.0).unwrap(), nx, ny, nt).unwrap()
}

fn tracking(g: &Grid, beta: f64) -> ProblemSpec {
    let l = g.domain.length;
    let target = StateTrajectory::from_fn(g, |p| (2.0 * PI * p.x1 / l).cos() * p.x2 + p.t);
    let source = StateTrajectory::from_fn(g, |p| (PI * p.x2).sin() * (1.0 - 0.5 * p.t));
    let init = snapshot_from_fn(g, |x1, x2| 0.2 * (2.0 * PI * x1 / l).sin() + 0.1 * x2);
    make_quadratic_problem(g, source, init, QuadraticTrackingPreset { target, beta }).unwrap()
}

fn cubic(g: &Grid) -> ProblemSpec {
    let nl = Nonlinearity::new(Arc::new(CubicDamping), g, SampleRanges::default()).unwrap();
    tracking(g, 0.5).with_nonlinearity(nl)
}

fn base_control(g: &Grid) -> BoundaryTrajectory {
    BoundaryTrajectory::from_fn(g, |p| 0.4 * (2.0 * PI * p.x1).cos() * (1.0 + p.t) + 0.1)
}

fn sup_diff(a: &ndarray::Array3<f64>, b: &ndarray::Array3<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Central-difference check of `<grad, v>` for random unit directions.
fn fd_errors(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    gradient: &BoundaryTrajectory,
    value: impl Fn(&BoundaryTrajectory) -> f64,
    directions: usize,
    seed: u64,
) -> Vec<f64> {
    let g = &problem.grid;
    let lambda = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..directions)
        .map(|_| {
            let v = random_direction(g, &mut rng);
            let fd = (value(&u.add_scaled(lambda, &v)) - value(&u.add_scaled(-lambda, &v))) / (2.0 * lambda);
            let exact = g.inner_sigma(gradient, &v).unwrap();
            (fd - exact).abs() / exact.abs()
        })
        .collect()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

#[test]
fn criterion_01_mms_convergence() {
    let mut errors = Vec::new();
    let mut steps = Vec::new();
    for (nx, ny, nt) in [(16, 5, 25), (32, 9, 100), (64, 17, 400)] {
        let g = grid(1.0, nx, ny, nt);
        let m = manufactured_solution(&g);
        // Oracle: y* = exp(-t) (2 + cos(2 pi x1) cos(pi x2)) evaluated directly.
        let exact = StateTrajectory::from_fn(&g, |p| {
            (-p.t).exp() * (2.0 + (2.0 * PI * p.x1).cos() * (PI * p.x2).cos())
        });
        assert!(sup_diff(exact.values(), m.exact.values()) < 1e-14);
        let p = make_quadratic_problem(
            &g,
            m.source.clone(),
            m.initial.clone(),
            QuadraticTrackingPreset {
                target: StateTrajectory::zeros(&g),
                beta: 1.0,
            },
        )
        .unwrap();
        let y = solve_state(&p, &m.control, &SolverOptions::default()).unwrap();
        errors.push(sup_diff(y.values(), exact.values()));
        steps.push(g.dt);
    }
    let orders: Vec<f64> = (0..2)
        .map(|k| (errors[k] / errors[k + 1]).ln() / (steps[k] / steps[k + 1]).ln())
        .collect();
    let passed = orders.iter().all(|o| (0.8..=1.2).contains(o));
    report(1, "MMS order in dt", passed, format!("errors {}, orders {orders:.3?}", sci(&errors)));
    assert!(passed);
}

#[test]
fn criterion_02_discrete_maximum_principle() {
    let g = grid(1.0, 32, 9, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sigma = random_direction(&g, &mut rng).zip_map(&BoundaryTrajectory::zeros(&g), |a, _| -3.0 * a.abs());
    let feedback = LinearFeedback {
        sigma,
        theta: BoundaryTrajectory::zeros(&g),
    };
    let nl = Nonlinearity::new(Arc::new(feedback), &g, SampleRanges::default()).unwrap();
    let init = snapshot_from_fn(&g, |x1, x2| {
        3.0 * (2.0 * PI * x1).cos() * (1.0 - x2) + 4.0 * x2 * x2 - 1.0 + 0.5 * (6.0 * PI * x1).sin()
    });
    let p = ProblemSpec::new(g.clone(), StateTrajectory::zeros(&g), init, nl, tracking(&g, 1.0).objective).unwrap();
    let opts = SolverOptions::default().with_stencil(NormalStencil::FirstOrder);
    let y = solve_state(&p, &BoundaryTrajectory::zeros(&g), &opts).unwrap();
    let worst = (1..=g.nt)
        .map(|n| y.max_abs_at(n) - y.max_abs_at(n - 1))
        .fold(f64::NEG_INFINITY, f64::max);
    let passed = worst <= 1e-12;
    report(2, "discrete maximum principle", passed, format!("largest level-to-level increase {worst:.3e}"));
    assert!(passed);
}

#[test]
fn criterion_03_duality_identity() {
    // Random smooth data: products of {1, cos(x1 + phase)}, {1, cos(pi x2)}, {1, t/T}
    // with uniform coefficients, on L = 2 pi.
    let coarse = grid(2.0 * PI, 32, 9, 64);
    let fine = grid(2.0 * PI, 64, 17, 256);
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut rows = Vec::new();
    for _ in 0..5 {
        let start = rng.clone();
        let mut gaps = [0.0; 2];
        for (k, g) in [&coarse, &fine].into_iter().enumerate() {
            rng = start.clone();
            let y_data = random_principal_data(g, &mut rng);
            let z_data = random_adjoint_data(g, &mut rng);
            gaps[k] = duality_gap(g, &y_data, &z_data, &opts).unwrap().relative();
        }
        rows.push(gaps);
    }
    let worst = rows.iter().map(|r| r[0]).fold(0.0, f64::max);
    let ratio = rows.iter().map(|r| r[0] / r[1]).fold(f64::INFINITY, f64::min);
    let passed = worst <= 1e-3 && ratio >= 2.0;
    let detail: Vec<String> = rows.iter().map(|r| format!("{:.2e}->{:.2e}", r[0], r[1])).collect();
    report(
        3,
        "duality identity",
        passed,
        format!("relative gaps {detail:?}, worst {worst:.3e} (tol 1e-3), min ratio {ratio:.2} (need 2)"),
    );
    assert!(passed);
}

#[test]
fn criterion_04_gradient_exactness() {
    let g = grid(1.0, 32, 9, 64);
    let opts = SolverOptions::default();
    let u = base_control(&g);
    let mut errs = Vec::new();
    for (problem, seed) in [(tracking(&g, 0.5), 41), (cubic(&g), 42)] {
        let gradient = objective_gradient(&problem, &u, &opts).unwrap().gradient;
        errs.push(fd_errors(&problem, &u, &gradient, |w| objective_value(&problem, w, &opts).unwrap(), 5, seed));
    }
    let (quad, cub) = (max(&errs[0]), max(&errs[1]));
    let passed = quad <= 1e-6 && cub <= 1e-5;
    report(4, "gradient vs central differences", passed, format!("quadratic {quad:.3e} (1e-6), cubic {cub:.3e} (1e-5)"));
    assert!(passed);
}

#[test]
fn criterion_05_second_order_form() {
    let g = grid(1.0, 16, 6, 20);
    let opts = SolverOptions::default();
    let u = base_control(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let cubic = cubic(&g);
    let v1 = random_direction(&g, &mut rng);
    let v2 = random_direction(&g, &mut rng);
    let a = objective_second_form(&cubic, &u, &v1, &v2, &opts).unwrap();
    let b = objective_second_form(&cubic, &u, &v2, &v1, &opts).unwrap();
    let symmetric = (a - b).abs() <= 1e-12 * a.abs().max(b.abs());

    let v = BoundaryTrajectory::from_fn(&g, |q| (2.0 * PI * q.x1).sin() + q.t);
    let form = objective_second_form(&cubic, &u, &v, &v, &opts).unwrap();
    let j0 = objective_value(&cubic, &u, &opts).unwrap();
    let lams = [1e-1, 5e-2, 2.5e-2];
    let errors: Vec<f64> = lams
        .iter()
        .map(|&l| {
            let jp = objective_value(&cubic, &u.add_scaled(l, &v), &opts).unwrap();
            let jm = objective_value(&cubic, &u.add_scaled(-l, &v), &opts).unwrap();
            ((jp - 2.0 * j0 + jm) / (l * l) - form).abs()
        })
        .collect();
    let slope = (errors[0] / errors[2]).ln() / (lams[0] / lams[2]).ln();

    let quad = tracking(&g, 0.5);
    let positive = (0..10).all(|_| {
        let v = random_direction(&g, &mut rng);
        objective_second_form(&quad, &u, &v, &v, &opts).unwrap() > 0.0
    });
    let passed = symmetric && slope >= 0.9 && positive;
    report(
        5,
        "second-order form",
        passed,
        format!("symmetry {:.2e}, second-difference errors {} (slope {slope:.2}), positivity {positive}", (a - b).abs(), sci(&errors)),
    );
    assert!(passed);
}

#[test]
fn criterion_06_quadratic_optimality() {
    let g = grid(1.0, 32, 9, 64);
    let beta = 0.5;
    let p = tracking(&g, beta);
    let (solver, opts) = (SolverOptions::default(), OptimizeOptions::default());
    let zero = BoundaryTrajectory::zeros(&g);
    let pic = picard_optimality_system(&p, beta, &zero, &solver, &opts).unwrap();
    // Independent certificate: recompute the adjoint at the returned control.
    let w = objective_gradient(&p, &pic.control, &solver).unwrap().boundary_adjoint;
    let scale = 1.0 + pic.control.max_abs();
    let certificate = pic.control.scale(beta).add_scaled(-1.0, &w).max_abs() / scale;
    let pg = projected_gradient(&p, &ControlBounds::unbounded(&g), &zero, &solver, &opts).unwrap();
    let agreement = pic.control.add_scaled(-1.0, &pg.control).max_abs() / scale;
    let passed = certificate <= 1e-6 && agreement <= 1e-5 && pg.converged;
    report(6, "quadratic optimality system", passed, format!("certificate {certificate:.3e} (1e-6), agreement {agreement:.3e} (1e-5)"));
    assert!(passed);
}

#[test]
fn criterion_07_box_constrained_kkt() {
    let g = grid(1.0, 32, 9, 64);
    let p = tracking(&g, 0.1);
    let (solver, opts) = (SolverOptions::default(), OptimizeOptions::default());
    let bounds = ControlBounds::uniform(&g, -0.25, 0.25).unwrap();
    let r = projected_gradient(&p, &bounds, &BoundaryTrajectory::zeros(&g), &solver, &opts).unwrap();
    let tol = 10.0 * opts.grad_tol;
    let gradient = objective_gradient(&p, &r.control, &solver).unwrap().gradient;
    let (mut interior, mut lower, mut upper, mut active) = (0.0f64, 0.0f64, 0.0f64, 0);
    for ((&u, &gr), (&lo, &hi)) in r
        .control
        .values()
        .iter()
        .zip(gradient.values())
        .zip(bounds.lower.values().iter().zip(bounds.upper.values()))
    {
        if u <= lo {
            lower = lower.max(-gr);
            active += 1;
        } else if u >= hi {
            upper = upper.max(gr);
            active += 1;
        } else {
            interior = interior.max(gr.abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut vi = f64::INFINITY;
    for _ in 0..20 {
        let v = bounds.project(&random_direction(&g, &mut rng).scale(0.5));
        let d = v.add_scaled(-1.0, &r.control);
        let lhs = g.inner_sigma(&gradient, &d).unwrap();
        vi = vi.min(lhs + tol * g.norm_sigma(&d).unwrap());
    }
    let passed = r.converged && interior <= tol && lower <= tol && upper <= tol && vi >= 0.0 && active > 0;
    report(
        7,
        "box-constrained KKT",
        passed,
        format!("active nodes {active}, interior |grad| {interior:.2e}, bound violations {lower:.2e}/{upper:.2e}, min VI margin {vi:.3e}"),
    );
    assert!(passed);
}

fn mean_constraint(offset: f64, kind: ConstraintKind) -> Constraint {
    Constraint {
        volume: Arc::new(LinearState { weight: 1.0 }),
        surface: Arc::new(Zero),
        offset,
        kind,
    }
}

#[test]
fn criterion_08_constrained_kkt() {
    let g = grid(1.0, 32, 9, 64);
    let (solver, opts) = (SolverOptions::default(), OptimizeOptions::default());
    let zero = BoundaryTrajectory::zeros(&g);
    let unbounded = ControlBounds::unbounded(&g);

    let c = 0.3;
    let p = tracking(&g, 0.5).with_constraints(ConstraintSpec::new(vec![mean_constraint(c, ConstraintKind::Equality)]).unwrap());
    let eq = augmented_lagrangian(&p, &unbounded, &zero, &solver, &opts).unwrap();
    let y = solve_state(&p, &eq.control, &solver).unwrap();
    let feasibility = (g.integrate_q(&y).unwrap() - c).abs();
    let stationarity = eq.report.stationarity;
    let eq_ok = feasibility <= 1e-6 * c && stationarity <= 10.0 * opts.grad_tol && eq.report.max_complementarity() == 0.0;

    let base = tracking(&g, 0.5);
    let free = projected_gradient(&base, &unbounded, &zero, &solver, &opts).unwrap();
    let mean = g.integrate_q(&solve_state(&base, &free.control, &solver).unwrap()).unwrap();
    let p = base.with_constraints(ConstraintSpec::new(vec![mean_constraint(mean + 0.5, ConstraintKind::Inequality)]).unwrap());
    let inactive = augmented_lagrangian(&p, &unbounded, &zero, &solver, &opts).unwrap();
    let diff = inactive.control.add_scaled(-1.0, &free.control).max_abs();
    let lam = inactive.report.multipliers[0];
    let inactive_ok = lam == 0.0 && diff <= 1e-5 && inactive.report.max_complementarity() <= opts.al_feas_tol;

    let passed = eq_ok && inactive_ok;
    report(
        8,
        "constrained KKT",
        passed,
        format!(
            "equality: feasibility {feasibility:.2e}, stationarity {stationarity:.2e}, lambda {:.4}; inactive: lambda {lam}, |u - u_free| {diff:.2e}",
            eq.report.multipliers[0]
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_constraint_gradient() {
    let g = grid(1.0, 32, 9, 64);
    let opts = SolverOptions::default();
    let p = tracking(&g, 1.0).with_constraints(ConstraintSpec::new(vec![mean_constraint(0.1, ConstraintKind::Equality)]).unwrap());
    let u = base_control(&g);
    let gradient = constraint_gradient(&p, &u, 0, &opts).unwrap();
    let errors = fd_errors(&p, &u, &gradient, |w| constraint_value(&p, w, 0, &opts).unwrap(), 3, 9);
    let worst = max(&errors);
    let passed = worst <= 1e-6;
    report(9, "constraint gradient", passed, format!("relative errors {}", sci(&errors)));
    assert!(passed);
}

fn run_grad_check(config: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_venttsel"))
        .args(["grad-check", "--quiet", "--seed", "17", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[grid]\nnx = 16\nny = 6\nnt = 20\n[problem]\npreset = \"quadratic\"\nphi = \"phi_cubic\"\nbeta = 0.5\n\
         target = \"wave\"\nsource = \"bump\"\ninitial = \"zero\"\ncontrol = \"wave\"\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (run_grad_check(&config, &a), run_grad_check(&config, &b));
    let same = |name: &str| std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
    let passed = ra.status.success() && rb.status.success() && same("report.json") && same("control.csv");
    report(10, "determinism", passed, "two grad-check runs with seed 17 compared byte for byte".into());
    assert!(passed);
}

#[test]
fn zero_initial_state_is_unused() {
    // Sanity check of the suite's helpers rather than a criterion.
    let g = grid(1.0, 8, 5, 4);
    let p = make_quadratic_problem(
        &g,
        StateTrajectory::zeros(&g),
        Array2::zeros((5, 8)),
        QuadraticTrackingPreset {
            target: StateTrajectory::zeros(&g),
            beta: 1.0,
        },
    )
    .unwrap();
    assert_eq!(objective_value(&p, &BoundaryTrajectory::zeros(&g), &SolverOptions::default()).unwrap(), 0.0);
}

//! Discrete adjoints, the duality identity, and derivatives of the objective
//! and constraint functionals.
//!
//! Derivatives are computed by transposing the discrete linearized solver.
//! With `A_n` the step Jacobian and `G_n` the derivative of the discrete
//! functional with respect to `y^n`, the backward recursion
//!
//! ```text
//! A_n^T lambda_n = lambda_{n+1} / dt + G_n,    lambda_{nt+1} = 0
//! ```
//!
//! gives `dJ(u) v = sum_n lambda_n . (phi_u v^n)` on boundary rows. Writing
//! `lambda_n = -w_t(n) hx w_hat^n` on the boundary turns this into the
//! gradient `q_u - phi_u w_hat` in the discrete `L2(Sigma)` inner product,
//! and `w_hat` is the boundary trace of a consistent approximation of the
//! adjoint state `w`, which solves
//!
//! ```text
//! -D_t w - Lap w = -p_y          in Q,
//! -D_t w - kappa D_x1^2 w + d_nu w - phi_y w = -q_y    on Sigma,
//! w(T) = 0.
//! ```

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::forward::{
    boundary_node, boundary_shift, solve_linear_state, solve_linearized, solve_state, SolverOptions,
    Stepper,
};
use crate::grid::{BoundaryTrajectory, Grid, Side, StateTrajectory};
use crate::model::ProblemSpec;

/// Data of the linear backward problem: source `g` on `Q`, `r` on `Sigma`,
/// terminal field `z_T`.
#[derive(Clone, Debug)]
pub struct AdjointData {
    pub g: StateTrajectory,
    pub r: BoundaryTrajectory,
    pub terminal: Array2<f64>,
}

impl AdjointData {
    pub fn new(g: StateTrajectory, r: BoundaryTrajectory, terminal: Array2<f64>) -> Result<Self> {
        let grid = g.grid().clone();
        r.check_grid(&grid)?;
        check_snapshot(&grid, &terminal)?;
        Ok(Self { g, r, terminal })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            g: StateTrajectory::zeros(grid),
            r: BoundaryTrajectory::zeros(grid),
            terminal: Array2::zeros((grid.ny, grid.nx)),
        }
    }
}

/// Data of the linear forward problem with boundary source `h` in place of `phi`.
#[derive(Clone, Debug)]
pub struct PrincipalData {
    pub f: StateTrajectory,
    pub h: BoundaryTrajectory,
    pub initial: Array2<f64>,
}

impl PrincipalData {
    pub fn new(f: StateTrajectory, h: BoundaryTrajectory, initial: Array2<f64>) -> Result<Self> {
        let grid = f.grid().clone();
        h.check_grid(&grid)?;
        check_snapshot(&grid, &initial)?;
        Ok(Self { f, h, initial })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            f: StateTrajectory::zeros(grid),
            h: BoundaryTrajectory::zeros(grid),
            initial: Array2::zeros((grid.ny, grid.nx)),
        }
    }
}

fn check_snapshot(grid: &Grid, field: &Array2<f64>) -> Result<()> {
    if field.dim() != (grid.ny, grid.nx) {
        return Err(Error::ShapeMismatch {
            expected: format!("({}, {})", grid.ny, grid.nx),
            found: format!("{:?}", field.dim()),
        });
    }
    Ok(())
}

/// Value and gradient of `J` at one control.
#[derive(Clone, Debug)]
pub struct DerivativeReport {
    pub value: f64,
    /// Riesz representative of `dJ` in the discrete `L2(Sigma)` inner product.
    pub gradient: BoundaryTrajectory,
    /// Adjoint state on all of `Q`, with `w(T) = 0`.
    pub adjoint: StateTrajectory,
    /// Boundary adjoint `w_hat` with `gradient = q_u - phi_u w_hat` exactly.
    pub boundary_adjoint: BoundaryTrajectory,
    pub state: StateTrajectory,
}

/// Gradient of `weight * J + sum_i mu_i F_i` together with the values of `J` and every `F_i`.
#[derive(Clone, Debug)]
pub struct Sensitivity {
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub gradient: BoundaryTrajectory,
    pub adjoint: StateTrajectory,
    pub boundary_adjoint: BoundaryTrajectory,
    pub state: StateTrajectory,
}

/// Quadrature weight of node row `j` in the pairing used to scale adjoints:
/// `hx * hy` inside, `hx` on the boundary rows.
fn pairing_weight(grid: &Grid, j: usize) -> f64 {
    if grid.is_boundary_row(j) {
        grid.hx
    } else {
        grid.hx * grid.hy
    }
}

/// Run the transposed recursion. Returns `lambda_n` for `n = 0..=nt`, with
/// `lambda_0` unused and zero.
fn backward_sweep(
    problem: &ProblemSpec,
    state: &StateTrajectory,
    u: &BoundaryTrajectory,
    opts: &SolverOptions,
    terminal: Option<&[f64]>,
    mut source: impl FnMut(usize, &mut [f64]),
) -> Result<Vec<Vec<f64>>> {
    let g = &problem.grid;
    let n = g.nodes();
    let mut stepper = Stepper::new(g, opts)?;
    let mut lambda = vec![vec![0.0; n]; g.nt + 1];
    let mut next: Vec<f64> = terminal.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut shift = vec![0.0; 2 * g.nx];
    for level in (1..=g.nt).rev() {
        boundary_shift(problem, state, u, level, &mut shift);
        stepper.prepare(&shift)?;
        let rhs = &mut lambda[level];
        source(level, rhs);
        for (r, x) in rhs.iter_mut().zip(&next) {
            *r += x / g.dt;
        }
        stepper.solve(rhs, true)?;
        next.copy_from_slice(rhs);
    }
    Ok(lambda)
}

/// Convert multipliers `lambda_n` into the adjoint state `w^{n-1} = -lambda_n / (dt W)`
/// (with `w^{nt} = 0`) and the boundary adjoint `w_hat^n = -lambda_n / (w_t(n) hx)`.
fn scale_multipliers(grid: &Grid, lambda: &[Vec<f64>]) -> (StateTrajectory, BoundaryTrajectory) {
    let mut adjoint = StateTrajectory::zeros(grid);
    for level in 1..=grid.nt {
        let out = adjoint.level_slice_mut(level - 1);
        for (node, (o, l)) in out.iter_mut().zip(&lambda[level]).enumerate() {
            *o = -l / (grid.dt * pairing_weight(grid, node / grid.nx));
        }
    }
    let mut boundary = BoundaryTrajectory::zeros(grid);
    for level in 1..=grid.nt {
        let scale = grid.weights.time[level] * grid.hx;
        for slot in 0..2 * grid.nx {
            let node = boundary_node(grid, slot);
            boundary.values_mut()[[level, slot / grid.nx, slot % grid.nx]] = -lambda[level][node] / scale;
        }
    }
    (adjoint, boundary)
}

/// Solve the linear backward problem with data `(g, r, z_T)` around the
/// linearization of the state equation at `(base, u)`.
///
/// The result is `z^{n-1} = lambda_n / (dt W)` with
/// `A_n^T lambda_n = lambda_{n+1} / dt + dt W (g, r)^{n-1}` and `z^{nt} = z_T`.
/// With the first-order normal stencil `W^{-1} A_n^T W = A_n`, so the scheme
/// is implicit Euler run backward and preserves constants.
pub fn solve_adjoint(
    problem: &ProblemSpec,
    base: &StateTrajectory,
    u: &BoundaryTrajectory,
    data: &AdjointData,
    opts: &SolverOptions,
) -> Result<StateTrajectory> {
    let g = &problem.grid;
    for other in [base.grid(), u.grid(), data.g.grid(), data.r.grid()] {
        if other != g {
            return Err(Error::ShapeMismatch {
                expected: g.describe(),
                found: other.describe(),
            });
        }
    }
    check_snapshot(g, &data.terminal)?;
    let weight = |node: usize| pairing_weight(g, node / g.nx);
    let terminal: Vec<f64> = data
        .terminal
        .iter()
        .enumerate()
        .map(|(node, z)| g.dt * weight(node) * z)
        .collect();
    let lambda = backward_sweep(problem, base, u, opts, Some(&terminal), |level, rhs| {
        let src = data.g.level_slice(level - 1);
        for (node, r) in rhs.iter_mut().enumerate() {
            *r = g.dt * weight(node) * src[node];
        }
        for slot in 0..2 * g.nx {
            let side = Side::ALL[slot / g.nx];
            rhs[boundary_node(g, slot)] = g.dt * g.hx * data.r.at(level - 1, side, slot % g.nx);
        }
    })?;
    let mut out = StateTrajectory::zeros(g);
    for level in 1..=g.nt {
        let dst = out.level_slice_mut(level - 1);
        for (node, (d, l)) in dst.iter_mut().zip(&lambda[level]).enumerate() {
            *d = l / (g.dt * weight(node));
        }
    }
    out.level_slice_mut(g.nt)
        .copy_from_slice(data.terminal.as_standard_layout().as_slice().expect("contiguous"));
    Ok(out)
}

/// Solve the backward problem by running the forward linear solver on the
/// time-reversed data `g(T - t)`, `r(T - t)` from `z_T`.
pub fn solve_adjoint_reversed(grid: &Grid, data: &AdjointData, opts: &SolverOptions) -> Result<StateTrajectory> {
    let reverse = |v: &ndarray::Array3<f64>| {
        let mut out = v.clone();
        out.invert_axis(ndarray::Axis(0));
        out.as_standard_layout().to_owned()
    };
    let f = StateTrajectory::from_array(grid, reverse(data.g.values()))?;
    let h = BoundaryTrajectory::from_array(grid, reverse(data.r.values()))?;
    let z = solve_linear_state(grid, &f, &h, &data.terminal, opts)?;
    StateTrajectory::from_array(grid, reverse(z.values()))
}

/// The six terms of the duality identity and their balance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityReport {
    /// `int_Q f z`
    pub fz: f64,
    /// `int_Sigma h z`
    pub hz: f64,
    /// `int_Q y g`
    pub yg: f64,
    /// `int_Sigma y r`
    pub yr: f64,
    /// `int_Omega (y(T) z_T - y_0 z(0))`
    pub omega: f64,
    /// `int_Gamma (y(T) z_T - y_0 z(0))`
    pub gamma: f64,
    /// `fz + hz - yg - yr - omega - gamma`
    pub gap: f64,
    /// Sum of the absolute values of the six terms.
    pub scale: f64,
}

impl DualityReport {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.gap.abs() / self.scale
        }
    }
}

/// Evaluate the duality identity between the principal system with data
/// `(f, h, y0)` and the backward system with data `(g, r, z_T)`:
///
/// ```text
/// int_Q f z + int_Sigma h z = int_Q y g + int_Sigma y r
///     + int_Omega (y(T) z_T - y0 z(0)) + int_Gamma (y(T) z_T - y0 z(0)).
/// ```
///
/// `y` and `z` are both computed with the forward scheme (the latter on
/// reversed data), so the gap is a pure discretization error.
pub fn duality_gap(
    grid: &Grid,
    principal: &PrincipalData,
    adjoint: &AdjointData,
    opts: &SolverOptions,
) -> Result<DualityReport> {
    let y = solve_linear_state(grid, &principal.f, &principal.h, &principal.initial, opts)?;
    let z = solve_adjoint_reversed(grid, adjoint, opts)?;
    let prod = |a: &StateTrajectory, b: &StateTrajectory| {
        grid.integrate_q_values((a.values() * b.values()).view())
    };
    let prod_sigma = |a: &BoundaryTrajectory, b: &BoundaryTrajectory| {
        grid.integrate_sigma_values((a.values() * b.values()).view())
    };
    let fz = prod(&principal.f, &z);
    let yg = prod(&y, &adjoint.g);
    let hz = prod_sigma(&principal.h, &z.trace());
    let yr = prod_sigma(&y.trace(), &adjoint.r);
    let corner = &y.level(grid.nt) * &adjoint.terminal - &principal.initial * &z.level(0);
    let (omega, gamma) = grid.integrate_snapshot(corner.view());
    let terms = [fz, hz, yg, yr, omega, gamma];
    Ok(DualityReport {
        fz,
        hz,
        yg,
        yr,
        omega,
        gamma,
        gap: fz + hz - yg - yr - omega - gamma,
        scale: terms.iter().map(|t| t.abs()).sum(),
    })
}

fn check_control(problem: &ProblemSpec, u: &BoundaryTrajectory) -> Result<()> {
    u.check_grid(&problem.grid)
}

/// `J_h(u)` for an already computed state.
pub fn objective_of_state(problem: &ProblemSpec, state: &StateTrajectory, u: &BoundaryTrajectory) -> f64 {
    let g = &problem.grid;
    let p = &problem.objective.volume;
    let q = &problem.objective.surface;
    let volume = StateTrajectory::from_fn(g, |at| p.value(at, state.values()[[at.level, at.j, at.i]]));
    let surface = BoundaryTrajectory::from_fn(g, |at| {
        let y = state.values()[[at.level, at.side.row(g.ny), at.i]];
        q.value(at, y, u.at(at.level, at.side, at.i))
    });
    g.integrate_q_values(volume.values().view()) + g.integrate_sigma_values(surface.values().view())
}

/// `F_i` for an already computed state.
pub fn constraint_of_state(problem: &ProblemSpec, state: &StateTrajectory, index: usize) -> Result<f64> {
    let c = constraint_entry(problem, index)?;
    let g = &problem.grid;
    let volume = StateTrajectory::from_fn(g, |at| c.volume.value(at, state.values()[[at.level, at.j, at.i]]));
    let surface = BoundaryTrajectory::from_fn(g, |at| {
        c.surface.value(at, state.values()[[at.level, at.side.row(g.ny), at.i]])
    });
    Ok(g.integrate_q_values(volume.values().view()) + g.integrate_sigma_values(surface.values().view())
        - c.offset)
}

fn constraint_entry(problem: &ProblemSpec, index: usize) -> Result<&crate::model::Constraint> {
    match &problem.constraints {
        Some(spec) => spec.get(index),
        None => Err(Error::ConstraintOutOfRange { index, count: 0 }),
    }
}

pub fn objective_value(problem: &ProblemSpec, u: &BoundaryTrajectory, opts: &SolverOptions) -> Result<f64> {
    check_control(problem, u)?;
    let y = solve_state(problem, u, opts)?;
    Ok(objective_of_state(problem, &y, u))
}

pub fn constraint_value(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    index: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    constraint_entry(problem, index)?;
    check_control(problem, u)?;
    let y = solve_state(problem, u, opts)?;
    constraint_of_state(problem, &y, index)
}

/// Gradient of `objective_weight * J + sum_i multipliers[i] * F_i` at `u`,
/// using a single backward sweep.
pub fn lagrangian_gradient(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    objective_weight: f64,
    multipliers: &[f64],
    opts: &SolverOptions,
) -> Result<Sensitivity> {
    check_control(problem, u)?;
    if multipliers.len() > problem.constraint_count() {
        return Err(Error::ConstraintOutOfRange {
            index: multipliers.len() - 1,
            count: problem.constraint_count(),
        });
    }
    let state = solve_state(problem, u, opts)?;
    lagrangian_gradient_at(problem, &state, u, objective_weight, multipliers, opts)
}

pub(crate) fn lagrangian_gradient_at(
    problem: &ProblemSpec,
    state: &StateTrajectory,
    u: &BoundaryTrajectory,
    objective_weight: f64,
    multipliers: &[f64],
    opts: &SolverOptions,
) -> Result<Sensitivity> {
    let g = &problem.grid;
    let constraints: Vec<_> = (0..multipliers.len())
        .map(|i| constraint_entry(problem, i))
        .collect::<Result<_>>()?;
    let p = &problem.objective.volume;
    let q = &problem.objective.surface;
    let lambda = backward_sweep(problem, state, u, opts, None, |level, rhs| {
        let wt = g.weights.time[level];
        let y = state.level(level);
        for j in 0..g.ny {
            let wq = wt * g.volume_weight(j);
            for i in 0..g.nx {
                let at = g.volume_point(level, j, i);
                let yy = y[[j, i]];
                let mut d = objective_weight * p.d_y(&at, yy);
                for (c, mu) in constraints.iter().zip(multipliers) {
                    d += mu * c.volume.d_y(&at, yy);
                }
                rhs[g.node(i, j)] = wq * d;
            }
        }
        for side in Side::ALL {
            let row = side.row(g.ny);
            for i in 0..g.nx {
                let at = g.boundary_point(level, side, i);
                let yy = y[[row, i]];
                let mut d = objective_weight * q.d_y(&at, yy, u.at(level, side, i));
                for (c, mu) in constraints.iter().zip(multipliers) {
                    d += mu * c.surface.d_y(&at, yy);
                }
                rhs[g.node(i, row)] += wt * g.hx * d;
            }
        }
    })?;
    let (adjoint, boundary_adjoint) = scale_multipliers(g, &lambda);
    let gradient = BoundaryTrajectory::from_fn(g, |at| {
        let y = state.values()[[at.level, at.side.row(g.ny), at.i]];
        let uu = u.at(at.level, at.side, at.i);
        let w = boundary_adjoint.at(at.level, at.side, at.i);
        objective_weight * q.d_u(at, y, uu) - problem.nonlinearity.d_u(at, y, uu) * w
    });
    let objective = objective_of_state(problem, state, u);
    let constraints = (0..problem.constraint_count())
        .map(|i| constraint_of_state(problem, state, i))
        .collect::<Result<_>>()?;
    Ok(Sensitivity {
        objective,
        constraints,
        gradient,
        adjoint,
        boundary_adjoint,
        state: state.clone(),
    })
}

pub fn objective_gradient(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    opts: &SolverOptions,
) -> Result<DerivativeReport> {
    let s = lagrangian_gradient(problem, u, 1.0, &[], opts)?;
    Ok(DerivativeReport {
        value: s.objective,
        gradient: s.gradient,
        adjoint: s.adjoint,
        boundary_adjoint: s.boundary_adjoint,
        state: s.state,
    })
}

/// Gradient of `F_i`: `-phi_u w_i` with `w_i` the adjoint for the sources `-a_i_y`, `-b_i_y`.
pub fn constraint_gradient(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    index: usize,
    opts: &SolverOptions,
) -> Result<BoundaryTrajectory> {
    constraint_entry(problem, index)?;
    let mut mu = vec![0.0; index + 1];
    mu[index] = 1.0;
    Ok(lagrangian_gradient(problem, u, 0.0, &mu, opts)?.gradient)
}

/// The second-order form of `J` given the state, boundary adjoint and first
/// derivatives `z_k = G'(u) v_k`.
#[allow(clippy::too_many_arguments)]
pub fn second_form_with(
    problem: &ProblemSpec,
    state: &StateTrajectory,
    u: &BoundaryTrajectory,
    boundary_adjoint: &BoundaryTrajectory,
    v1: &BoundaryTrajectory,
    v2: &BoundaryTrajectory,
    z1: &StateTrajectory,
    z2: &StateTrajectory,
) -> f64 {
    let g = &problem.grid;
    let (p, q, phi) = (&problem.objective.volume, &problem.objective.surface, &problem.nonlinearity);
    let volume = StateTrajectory::from_fn(g, |at| {
        let idx = [at.level, at.j, at.i];
        p.d_yy(at, state.values()[idx]) * (z1.values()[idx] * z2.values()[idx])
    });
    let surface = BoundaryTrajectory::from_fn(g, |at| {
        let idx = [at.level, at.side.row(g.ny), at.i];
        let (y, uu) = (state.values()[idx], u.at(at.level, at.side, at.i));
        let w = boundary_adjoint.at(at.level, at.side, at.i);
        let (a, b) = (z1.values()[idx], z2.values()[idx]);
        let (va, vb) = (v1.at(at.level, at.side, at.i), v2.at(at.level, at.side, at.i));
        (q.d_yy(at, y, uu) - phi.d_yy(at, y, uu) * w) * (a * b)
            + (q.d_yu(at, y, uu) - phi.d_yu(at, y, uu) * w) * (a * vb + b * va)
            + (q.d_uu(at, y, uu) - phi.d_uu(at, y, uu) * w) * (va * vb)
    });
    g.integrate_q_values(volume.values().view()) + g.integrate_sigma_values(surface.values().view())
}

/// `<J''(u) v1, v2>`, the exact second derivative of `J_h`.
pub fn objective_second_form(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    v1: &BoundaryTrajectory,
    v2: &BoundaryTrajectory,
    opts: &SolverOptions,
) -> Result<f64> {
    v1.check_grid(&problem.grid)?;
    v2.check_grid(&problem.grid)?;
    let report = objective_gradient(problem, u, opts)?;
    let z1 = solve_linearized(problem, &report.state, u, v1, opts)?;
    let z2 = solve_linearized(problem, &report.state, u, v2, opts)?;
    Ok(second_form_with(
        problem,
        &report.state,
        u,
        &report.boundary_adjoint,
        v1,
        v2,
        &z1,
        &z2,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{step_jacobian, NormalStencil};
    use crate::grid::{snapshot_from_fn, DomainSpec};
    use crate::model::presets::{CubicDamping, LinearState, Zero};
    use crate::model::{
        make_quadratic_problem, Constraint, ConstraintKind, ConstraintSpec, Nonlinearity,
        QuadraticTrackingPreset, SampleRanges,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(nx: usize, ny: usize, nt: usize) -> Grid {
        Grid::new(DomainSpec::new(1.0, 1.0, 1.0).unwrap(), nx, ny, nt).unwrap()
    }

    fn tracking_problem(g: &Grid, beta: f64) -> ProblemSpec {
        let target = StateTrajectory::from_fn(g, |p| (2.0 * PI * p.x1).sin() * p.x2 + 0.5 * p.t);
        let source = StateTrajectory::from_fn(g, |p| (PI * p.x2).sin() * (1.0 - p.t));
        let init = snapshot_from_fn(g, |x1, x2| 0.2 * (2.0 * PI * x1).cos() + 0.1 * x2);
        make_quadratic_problem(g, source, init, QuadraticTrackingPreset { target, beta }).unwrap()
    }

    fn cubic_problem(g: &Grid) -> ProblemSpec {
        let nl = Nonlinearity::new(Arc::new(CubicDamping), g, SampleRanges::default()).unwrap();
        tracking_problem(g, 0.5).with_nonlinearity(nl)
    }

    fn random_direction(g: &Grid, rng: &mut ChaCha8Rng) -> BoundaryTrajectory {
        let mut v = BoundaryTrajectory::from_fn(g, |_| rng.random_range(-1.0..1.0));
        let m = v.max_abs();
        v.values_mut().mapv_inplace(|x| x / m);
        v
    }

    fn control(g: &Grid) -> BoundaryTrajectory {
        BoundaryTrajectory::from_fn(g, |p| 0.4 * (2.0 * PI * p.x1).cos() * (1.0 + p.t) + 0.1)
    }

    fn fd_check(problem: &ProblemSpec, tol: f64, seed: u64) {
        let g = &problem.grid;
        let opts = SolverOptions::default();
        let u = control(g);
        let report = objective_gradient(problem, &u, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lam = 1e-4;
        for _ in 0..5 {
            let v = random_direction(g, &mut rng);
            let ad = g.inner_sigma(&report.gradient, &v).unwrap();
            let jp = objective_value(problem, &u.add_scaled(lam, &v), &opts).unwrap();
            let jm = objective_value(problem, &u.add_scaled(-lam, &v), &opts).unwrap();
            let fd = (jp - jm) / (2.0 * lam);
            assert!((ad - fd).abs() <= tol * ad.abs(), "adjoint {ad}, fd {fd}");
        }
    }

    #[test]
    fn zero_data_gives_zero_adjoint() {
        let g = grid(8, 5, 6);
        let p = tracking_problem(&g, 1.0);
        let u = BoundaryTrajectory::zeros(&g);
        let y = solve_state(&p, &u, &SolverOptions::default()).unwrap();
        let z = solve_adjoint(&p, &y, &u, &AdjointData::zeros(&g), &SolverOptions::default()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn adjoint_preserves_constants_with_first_order_stencil() {
        let g = grid(8, 6, 10);
        let p = tracking_problem(&g, 1.0);
        let u = BoundaryTrajectory::zeros(&g);
        let opts = SolverOptions::default().with_stencil(NormalStencil::FirstOrder);
        let y = solve_state(&p, &u, &opts).unwrap();
        let data = AdjointData {
            terminal: Array2::from_elem((6, 8), -1.5),
            ..AdjointData::zeros(&g)
        };
        let z = solve_adjoint(&p, &y, &u, &data, &opts).unwrap();
        for v in z.values() {
            assert!((v + 1.5).abs() < 1e-11, "{v}");
        }
    }

    fn smooth_adjoint_data(g: &Grid) -> AdjointData {
        AdjointData {
            g: StateTrajectory::from_fn(g, |p| (2.0 * PI * p.x1).sin() * (1.0 + p.x2 * p.t)),
            r: BoundaryTrajectory::from_fn(g, |p| (2.0 * PI * p.x1).cos() * (2.0 - p.t)),
            terminal: snapshot_from_fn(g, |x1, x2| 1.0 + 0.5 * (2.0 * PI * x1).cos() * x2),
        }
    }

    #[test]
    fn adjoint_matches_reversed_forward_solve() {
        let g = grid(12, 7, 20);
        let p = tracking_problem(&g, 1.0);
        let u = BoundaryTrajectory::zeros(&g);
        let data = smooth_adjoint_data(&g);

        let opts = SolverOptions::default().with_stencil(NormalStencil::FirstOrder);
        let y = solve_state(&p, &u, &opts).unwrap();
        let z = solve_adjoint(&p, &y, &u, &data, &opts).unwrap();
        let reversed = solve_adjoint_reversed(&g, &data, &opts).unwrap();
        let diff = (z.values() - reversed.values()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-10 * reversed.max_abs(), "{diff}");
    }

    #[test]
    fn second_order_adjoint_trace_converges_to_reversed_solve() {
        let mut errors = Vec::new();
        for (nx, ny, nt) in [(12, 5, 16), (24, 9, 64), (48, 17, 256)] {
            let g = grid(nx, ny, nt);
            let p = tracking_problem(&g, 1.0);
            let u = BoundaryTrajectory::zeros(&g);
            let data = smooth_adjoint_data(&g);
            let opts = SolverOptions::default();
            let y = solve_state(&p, &u, &opts).unwrap();
            let z = solve_adjoint(&p, &y, &u, &data, &opts).unwrap().trace();
            let reversed = solve_adjoint_reversed(&g, &data, &opts).unwrap().trace();
            errors.push((z.values() - reversed.values()).iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
        assert!(errors[1] < 0.7 * errors[0] && errors[2] < 0.7 * errors[1], "{errors:?}");
    }

    #[test]
    fn step_operator_transpose_pairing() {
        let g = grid(8, 5, 4);
        let p = cubic_problem(&g);
        let u = control(&g);
        let opts = SolverOptions::default();
        let y = solve_state(&p, &u, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for level in 1..=g.nt {
            let a = step_jacobian(&p, &y, &u, level, &opts).unwrap().matrix;
            let z: Vec<f64> = (0..g.nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l: Vec<f64> = (0..g.nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (mut az, mut atl) = (vec![0.0; g.nodes()], vec![0.0; g.nodes()]);
            a.matvec(&z, &mut az);
            a.matvec_transpose(&l, &mut atl);
            let lhs: f64 = az.iter().zip(&l).map(|(x, y)| x * y).sum();
            let rhs: f64 = z.iter().zip(&atl).map(|(x, y)| x * y).sum();
            let scale: f64 = az.iter().zip(&l).map(|(x, y)| (x * y).abs()).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn duality_gap_vanishes_for_zero_state() {
        let g = grid(8, 5, 8);
        let opts = SolverOptions::default();
        let zero = duality_gap(&g, &PrincipalData::zeros(&g), &AdjointData::zeros(&g), &opts).unwrap();
        assert_eq!(zero.gap, 0.0);
        let only_z = duality_gap(&g, &PrincipalData::zeros(&g), &smooth_adjoint_data(&g), &opts).unwrap();
        assert_eq!(only_z.gap, 0.0);
    }

    #[test]
    fn duality_gap_shrinks_under_refinement() {
        let mut rel = Vec::new();
        for (nx, ny, nt) in [(16, 5, 16), (32, 9, 64)] {
            let g = Grid::new(DomainSpec::new(1.0, 0.25, 1.0).unwrap(), nx, ny, nt).unwrap();
            let principal = PrincipalData {
                f: StateTrajectory::from_fn(&g, |p| (2.0 * PI * p.x1).cos() * (PI * p.x2).cos()),
                h: BoundaryTrajectory::from_fn(&g, |p| 1.0 + (2.0 * PI * p.x1).sin() * p.t),
                initial: snapshot_from_fn(&g, |x1, x2| x2 * x2 + (2.0 * PI * x1).sin()),
            };
            let report = duality_gap(&g, &principal, &smooth_adjoint_data(&g), &SolverOptions::default()).unwrap();
            rel.push(report.relative());
        }
        assert!(rel[1] < rel[0] / 2.0, "{rel:?}");
    }

    #[test]
    fn quadratic_gradient_vanishes_at_minimum() {
        let g = grid(8, 5, 6);
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
        let r = objective_gradient(&p, &BoundaryTrajectory::zeros(&g), &SolverOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.gradient.max_abs(), 0.0);
    }

    #[test]
    fn objective_with_matched_target_is_control_cost() {
        let g = grid(8, 5, 10);
        let opts = SolverOptions::default();
        let u = BoundaryTrajectory::constant(&g, 1.0);
        let probe = tracking_problem(&g, 2.0);
        let y = solve_state(&probe, &u, &opts).unwrap();
        let p = make_quadratic_problem(
            &g,
            probe.source.clone(),
            probe.initial.clone(),
            QuadraticTrackingPreset { target: y, beta: 2.0 },
        )
        .unwrap();
        let j = objective_value(&p, &u, &opts).unwrap();
        assert!((j - 2.0).abs() < 1e-12, "{j}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(&tracking_problem(&grid(12, 6, 16), 1.0), 1e-6, 11);
        fd_check(&cubic_problem(&grid(12, 6, 16)), 1e-5, 12);
    }

    #[test]
    fn gradient_is_q_u_minus_phi_u_times_boundary_adjoint() {
        let g = grid(8, 5, 6);
        let p = tracking_problem(&g, 3.0);
        let u = control(&g);
        let r = objective_gradient(&p, &u, &SolverOptions::default()).unwrap();
        let expected = u.scale(3.0).add_scaled(-1.0, &r.boundary_adjoint);
        assert_eq!(r.gradient, expected);
        assert_eq!(r.adjoint.max_abs_at(g.nt), 0.0);
    }

    #[test]
    fn second_form_properties() {
        let g = grid(10, 6, 12);
        let opts = SolverOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = cubic_problem(&g);
        let u = control(&g);
        let v1 = random_direction(&g, &mut rng);
        let v2 = random_direction(&g, &mut rng);
        let a = objective_second_form(&p, &u, &v1, &v2, &opts).unwrap();
        let b = objective_second_form(&p, &u, &v2, &v1, &opts).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");

        let quad = tracking_problem(&g, 0.7);
        let v = random_direction(&g, &mut rng);
        let form = objective_second_form(&quad, &u, &v, &v, &opts).unwrap();
        let y = solve_state(&quad, &u, &opts).unwrap();
        let z = solve_linearized(&quad, &y, &u, &v, &opts).unwrap();
        let expected = g.integrate_q_values((z.values() * z.values()).view())
            + 0.7 * g.inner_sigma(&v, &v).unwrap();
        assert!((form - expected).abs() <= 1e-12 * expected, "{form} vs {expected}");
    }

    #[test]
    fn second_form_matches_second_differences() {
        let g = grid(10, 6, 12);
        let opts = SolverOptions::default();
        let p = cubic_problem(&g);
        let u = control(&g);
        let v = BoundaryTrajectory::from_fn(&g, |q| (2.0 * PI * q.x1).sin() + q.t);
        let form = objective_second_form(&p, &u, &v, &v, &opts).unwrap();
        let j0 = objective_value(&p, &u, &opts).unwrap();
        let mut errors = Vec::new();
        for lam in [1e-1, 5e-2, 2.5e-2] {
            let jp = objective_value(&p, &u.add_scaled(lam, &v), &opts).unwrap();
            let jm = objective_value(&p, &u.add_scaled(-lam, &v), &opts).unwrap();
            errors.push(((jp - 2.0 * j0 + jm) / (lam * lam) - form).abs());
        }
        assert!(errors[2] < errors[0] / 3.0, "{errors:?}");
    }

    #[test]
    fn constraint_value_and_gradient() {
        let g = grid(10, 6, 12);
        let opts = SolverOptions::default();
        let make = |offset: f64| Constraint {
            volume: Arc::new(LinearState { weight: 1.0 }),
            surface: Arc::new(Zero),
            offset,
            kind: ConstraintKind::Equality,
        };
        let zero = Constraint {
            volume: Arc::new(Zero),
            surface: Arc::new(Zero),
            offset: 0.0,
            kind: ConstraintKind::Equality,
        };
        let p = tracking_problem(&g, 1.0)
            .with_constraints(ConstraintSpec::new(vec![make(0.0), make(0.75), zero]).unwrap());
        let u = control(&g);
        let f0 = constraint_value(&p, &u, 0, &opts).unwrap();
        let f1 = constraint_value(&p, &u, 1, &opts).unwrap();
        assert!((f0 - f1 - 0.75).abs() < 1e-14);
        assert_eq!(constraint_value(&p, &u, 2, &opts).unwrap(), 0.0);
        assert_eq!(constraint_gradient(&p, &u, 2, &opts).unwrap().max_abs(), 0.0);
        assert!(matches!(
            constraint_value(&p, &u, 3, &opts),
            Err(Error::ConstraintOutOfRange { index: 3, count: 3 })
        ));

        let grad = constraint_gradient(&p, &u, 0, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let v = random_direction(&g, &mut rng);
            let ad = g.inner_sigma(&grad, &v).unwrap();
            let lam = 1e-4;
            let fp = constraint_value(&p, &u.add_scaled(lam, &v), 0, &opts).unwrap();
            let fm = constraint_value(&p, &u.add_scaled(-lam, &v), 0, &opts).unwrap();
            let fd = (fp - fm) / (2.0 * lam);
            assert!((ad - fd).abs() <= 1e-6 * ad.abs(), "{ad} vs {fd}");
        }
    }
}

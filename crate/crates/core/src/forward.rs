//! Implicit Euler time stepping for the state equation and its linearizations.
//!
//! One step from level `n - 1` to level `n` solves
//!
//! ```text
//! (y^n - y^{n-1}) / dt + K y^n = f^n + phi(y^n, u^n)
//! ```
//!
//! where `K` is the 5-point `-Laplacian` on interior rows and
//! `-kappa D_x1^2 + d_nu` on the two boundary rows, and `phi` acts on
//! boundary rows only. Newton's method is used for the boundary nonlinearity.
//! The step Jacobian `A_n = I / dt + K - diag(phi_y)` is also the operator
//! of the linearized systems and, transposed, of the discrete adjoint.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{BoundaryTrajectory, Grid, Side, StateTrajectory};
use crate::linalg::{max_abs, FactoredOperator, SparseMatrix};
use crate::model::ProblemSpec;

/// Discretization of the outward normal derivative on the boundary rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormalStencil {
    /// `(y_0 - y_1) / hy`. Keeps the step matrix an M-matrix.
    FirstOrder,
    /// `(3 y_0 - 4 y_1 + y_2) / (2 hy)`.
    #[default]
    SecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Newton stops once `dt * |residual|_inf <= newton_tol * max(1, |y|_inf)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Same scaled criterion for every linear solve.
    pub linear_tol: f64,
    pub normal_stencil: NormalStencil,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            linear_tol: 1e-11,
            normal_stencil: NormalStencil::SecondOrder,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("newton_tol", self.newton_tol), ("linear_tol", self.linear_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_stencil(mut self, stencil: NormalStencil) -> Self {
        self.normal_stencil = stencil;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Interior,
    Bottom,
    Top,
}

/// Linearization of one implicit Euler step at a converged state.
#[derive(Clone, Debug)]
pub struct StepOperator {
    pub matrix: SparseMatrix,
    pub kinds: Vec<RowKind>,
}

impl StepOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Row kinds of one time level in node order.
pub fn row_kinds(grid: &Grid) -> Vec<RowKind> {
    (0..grid.nodes())
        .map(|node| match node / grid.nx {
            0 => RowKind::Bottom,
            j if j == grid.ny - 1 => RowKind::Top,
            _ => RowKind::Interior,
        })
        .collect()
}

/// `I / dt + K` in node order.
fn base_operator(grid: &Grid, stencil: NormalStencil) -> SparseMatrix {
    let (nx, ny) = (grid.nx, grid.ny);
    let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    let kappa = grid.domain.kappa;
    let mut t = Vec::with_capacity(grid.nodes() * 6);
    for j in 0..ny {
        for i in 0..nx {
            let row = grid.node(i, j);
            let left = grid.node((i + nx - 1) % nx, j);
            let right = grid.node((i + 1) % nx, j);
            t.push((row, row, 1.0 / grid.dt));
            if grid.is_boundary_row(j) {
                t.push((row, row, 2.0 * kappa * ihx2));
                t.push((row, left, -kappa * ihx2));
                t.push((row, right, -kappa * ihx2));
                let side = if j == 0 { Side::Bottom } else { Side::Top };
                let inner = |depth| grid.node(i, side.inward(ny, depth));
                match stencil {
                    NormalStencil::FirstOrder => {
                        t.push((row, row, 1.0 / grid.hy));
                        t.push((row, inner(1), -1.0 / grid.hy));
                    }
                    NormalStencil::SecondOrder => {
                        t.push((row, row, 1.5 / grid.hy));
                        t.push((row, inner(1), -2.0 / grid.hy));
                        t.push((row, inner(2), 0.5 / grid.hy));
                    }
                }
            } else {
                t.push((row, row, 2.0 * ihx2 + 2.0 * ihy2));
                t.push((row, left, -ihx2));
                t.push((row, right, -ihx2));
                t.push((row, grid.node(i, j - 1), -ihy2));
                t.push((row, grid.node(i, j + 1), -ihy2));
            }
        }
    }
    SparseMatrix::from_triplets(grid.nodes(), t)
}

/// Index `side * nx + i` of a boundary node within per-level boundary vectors.
#[inline]
pub(crate) fn boundary_slot(grid: &Grid, side: Side, i: usize) -> usize {
    side.index() * grid.nx + i
}

pub(crate) fn boundary_node(grid: &Grid, slot: usize) -> usize {
    let side = Side::ALL[slot / grid.nx];
    grid.node(slot % grid.nx, side.row(grid.ny))
}

/// Owns the step matrix, its factorization, and reuses the factors while the
/// boundary shift `-phi_y` is unchanged.
pub(crate) struct Stepper {
    pub(crate) grid: Grid,
    opts: SolverOptions,
    base: SparseMatrix,
    work: SparseMatrix,
    diag_pos: Vec<usize>,
    factors: FactoredOperator,
    cached_shift: Option<Vec<f64>>,
    residual: Vec<f64>,
    correction: Vec<f64>,
}

impl Stepper {
    pub(crate) fn new(grid: &Grid, opts: &SolverOptions) -> Result<Self> {
        opts.validate()?;
        let base = base_operator(grid, opts.normal_stencil);
        let diag_pos = (0..2 * grid.nx)
            .map(|slot| {
                let node = boundary_node(grid, slot);
                base.position(node, node).expect("diagonal present")
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            opts: *opts,
            work: base.clone(),
            base,
            diag_pos,
            factors: FactoredOperator::new(grid.nx, grid.ny),
            cached_shift: None,
            residual: vec![0.0; grid.nodes()],
            correction: vec![0.0; grid.nodes()],
        })
    }

    pub(crate) fn base(&self) -> &SparseMatrix {
        &self.base
    }

    /// Assemble `I / dt + K + diag(shift)` on boundary rows and factor it if needed.
    pub(crate) fn prepare(&mut self, shift: &[f64]) -> Result<()> {
        if self.cached_shift.as_deref() == Some(shift) {
            return Ok(());
        }
        self.work.values_mut().copy_from_slice(self.base.values());
        for (slot, &pos) in self.diag_pos.iter().enumerate() {
            self.work.values_mut()[pos] += shift[slot];
        }
        self.cached_shift = None;
        self.factors.factor(&self.work)?;
        self.cached_shift = Some(shift.to_vec());
        Ok(())
    }

    /// Solve with the prepared matrix (or its transpose), refining until the
    /// scaled residual meets `linear_tol`.
    pub(crate) fn solve(&mut self, rhs: &mut [f64], transpose: bool) -> Result<()> {
        let b = rhs.to_vec();
        self.factors.solve(rhs, transpose);
        for _ in 0..4 {
            if transpose {
                self.work.matvec_transpose(rhs, &mut self.residual);
            } else {
                self.work.matvec(rhs, &mut self.residual);
            }
            for (r, bb) in self.residual.iter_mut().zip(&b) {
                *r = bb - *r;
            }
            let scaled = self.grid.dt * max_abs(&self.residual);
            if !scaled.is_finite() {
                break;
            }
            if scaled <= self.opts.linear_tol * max_abs(rhs).max(1.0) {
                return Ok(());
            }
            self.correction.copy_from_slice(&self.residual);
            self.factors.solve(&mut self.correction, transpose);
            for (x, c) in rhs.iter_mut().zip(&self.correction) {
                *x += c;
            }
        }
        Err(Error::LinearSolveFailure(format!(
            "scaled residual {:e} above tolerance {:e}",
            self.grid.dt * max_abs(&self.residual),
            self.opts.linear_tol
        )))
    }
}

/// `-phi_y` at every boundary slot of `level`.
pub(crate) fn boundary_shift(
    problem: &ProblemSpec,
    state: &StateTrajectory,
    u: &BoundaryTrajectory,
    level: usize,
    out: &mut [f64],
) {
    let g = &problem.grid;
    let y = state.level(level);
    for side in Side::ALL {
        let row = side.row(g.ny);
        for i in 0..g.nx {
            let at = g.boundary_point(level, side, i);
            out[boundary_slot(g, side, i)] =
                -problem.nonlinearity.d_y(&at, y[[row, i]], u.at(level, side, i));
        }
    }
}

fn check_problem_grid(problem: &ProblemSpec, fields: &[&Grid]) -> Result<()> {
    for g in fields {
        if *g != &problem.grid {
            return Err(Error::ShapeMismatch {
                expected: problem.grid.describe(),
                found: g.describe(),
            });
        }
    }
    Ok(())
}

/// Solve the semilinear state equation for the control `u`.
pub fn solve_state(
    problem: &ProblemSpec,
    u: &BoundaryTrajectory,
    opts: &SolverOptions,
) -> Result<StateTrajectory> {
    check_problem_grid(problem, &[u.grid()])?;
    let g = &problem.grid;
    let mut stepper = Stepper::new(g, opts)?;
    let n = g.nodes();
    let mut out = StateTrajectory::zeros(g);
    out.level_slice_mut(0)
        .copy_from_slice(problem.initial.as_slice().expect("standard layout"));
    let mut shift = vec![0.0; 2 * g.nx];
    let mut residual = vec![0.0; n];
    let mut applied = vec![0.0; n];
    let mut y = vec![0.0; n];
    for level in 1..=g.nt {
        let prev = out.level_slice(level - 1).to_vec();
        y.copy_from_slice(&prev);
        let f = problem.source.level_slice(level);
        let mut iterations = 0;
        loop {
            stepper.base().matvec(&y, &mut applied);
            for node in 0..n {
                residual[node] = applied[node] - prev[node] / g.dt;
                if !g.is_boundary_row(node / g.nx) {
                    residual[node] -= f[node];
                }
            }
            for slot in 0..2 * g.nx {
                let side = Side::ALL[slot / g.nx];
                let i = slot % g.nx;
                let node = boundary_node(g, slot);
                let at = g.boundary_point(level, side, i);
                let uu = u.at(level, side, i);
                residual[node] -= problem.nonlinearity.value(&at, y[node], uu);
                shift[slot] = -problem.nonlinearity.d_y(&at, y[node], uu);
            }
            let scaled = g.dt * max_abs(&residual);
            let scale = max_abs(&y).max(1.0);
            if scaled <= opts.newton_tol * scale {
                break;
            }
            if iterations == opts.newton_max_iter || !scaled.is_finite() {
                return Err(Error::NewtonDivergence {
                    step: level,
                    residual: scaled,
                    iterations,
                });
            }
            stepper.prepare(&shift)?;
            residual.iter_mut().for_each(|r| *r = -*r);
            stepper.solve(&mut residual, false)?;
            for (yy, d) in y.iter_mut().zip(&residual) {
                *yy += d;
            }
            iterations += 1;
        }
        out.level_slice_mut(level).copy_from_slice(&y);
    }
    Ok(out)
}

/// March `A_n x^n = x^{n-1} / dt + s_n` with `A_n` shifted by `shift(level)`
/// on boundary rows and `s_n` filled in by `source`.
pub(crate) fn march_linear(
    grid: &Grid,
    opts: &SolverOptions,
    initial: &[f64],
    mut shift: impl FnMut(usize, &mut [f64]),
    mut source: impl FnMut(usize, &mut [f64]),
) -> Result<StateTrajectory> {
    let mut stepper = Stepper::new(grid, opts)?;
    let mut out = StateTrajectory::zeros(grid);
    out.level_slice_mut(0).copy_from_slice(initial);
    let mut s = vec![0.0; 2 * grid.nx];
    let mut rhs = vec![0.0; grid.nodes()];
    for level in 1..=grid.nt {
        shift(level, &mut s);
        stepper.prepare(&s)?;
        rhs.iter_mut().for_each(|v| *v = 0.0);
        source(level, &mut rhs);
        for (r, p) in rhs.iter_mut().zip(out.level_slice(level - 1)) {
            *r += p / grid.dt;
        }
        stepper.solve(&mut rhs, false)?;
        out.level_slice_mut(level).copy_from_slice(&rhs);
    }
    Ok(out)
}

/// Solve the linear principal system with boundary source `h` in place of `phi`.
pub fn solve_linear_state(
    grid: &Grid,
    source: &StateTrajectory,
    boundary_source: &BoundaryTrajectory,
    initial: &Array2<f64>,
    opts: &SolverOptions,
) -> Result<StateTrajectory> {
    if source.grid() != grid || boundary_source.grid() != grid {
        return Err(Error::ShapeMismatch {
            expected: grid.describe(),
            found: "data on a different grid".into(),
        });
    }
    if initial.dim() != (grid.ny, grid.nx) {
        return Err(Error::ShapeMismatch {
            expected: format!("({}, {})", grid.ny, grid.nx),
            found: format!("{:?}", initial.dim()),
        });
    }
    let init = initial.as_standard_layout();
    march_linear(
        grid,
        opts,
        init.as_slice().expect("standard layout"),
        |_, s| s.iter_mut().for_each(|v| *v = 0.0),
        |level, rhs| {
            let f = source.level_slice(level);
            for (node, r) in rhs.iter_mut().enumerate() {
                if !grid.is_boundary_row(node / grid.nx) {
                    *r = f[node];
                }
            }
            for slot in 0..2 * grid.nx {
                let side = Side::ALL[slot / grid.nx];
                rhs[boundary_node(grid, slot)] = boundary_source.at(level, side, slot % grid.nx);
            }
        },
    )
}

/// First derivative `z = G'(u) v` of the control-to-state map.
pub fn solve_linearized(
    problem: &ProblemSpec,
    base: &StateTrajectory,
    u: &BoundaryTrajectory,
    v: &BoundaryTrajectory,
    opts: &SolverOptions,
) -> Result<StateTrajectory> {
    check_problem_grid(problem, &[base.grid(), u.grid(), v.grid()])?;
    let g = &problem.grid;
    march_linear(
        g,
        opts,
        &vec![0.0; g.nodes()],
        |level, s| boundary_shift(problem, base, u, level, s),
        |level, rhs| {
            let y = base.level(level);
            for side in Side::ALL {
                let row = side.row(g.ny);
                for i in 0..g.nx {
                    let at = g.boundary_point(level, side, i);
                    let d_u = problem.nonlinearity.d_u(&at, y[[row, i]], u.at(level, side, i));
                    rhs[g.node(i, row)] = d_u * v.at(level, side, i);
                }
            }
        },
    )
}

/// Second derivative `z12 = G''(u)(v1, v2)` given `z_k = G'(u) v_k`.
#[allow(clippy::too_many_arguments)]
pub fn solve_second_linearized(
    problem: &ProblemSpec,
    base: &StateTrajectory,
    u: &BoundaryTrajectory,
    v1: &BoundaryTrajectory,
    v2: &BoundaryTrajectory,
    z1: &StateTrajectory,
    z2: &StateTrajectory,
    opts: &SolverOptions,
) -> Result<StateTrajectory> {
    check_problem_grid(
        problem,
        &[base.grid(), u.grid(), v1.grid(), v2.grid(), z1.grid(), z2.grid()],
    )?;
    let g = &problem.grid;
    let phi = &problem.nonlinearity;
    march_linear(
        g,
        opts,
        &vec![0.0; g.nodes()],
        |level, s| boundary_shift(problem, base, u, level, s),
        |level, rhs| {
            let (y, a, b) = (base.level(level), z1.level(level), z2.level(level));
            for side in Side::ALL {
                let row = side.row(g.ny);
                for i in 0..g.nx {
                    let at = g.boundary_point(level, side, i);
                    let (yy, uu) = (y[[row, i]], u.at(level, side, i));
                    let (za, zb) = (a[[row, i]], b[[row, i]]);
                    let (va, vb) = (v1.at(level, side, i), v2.at(level, side, i));
                    rhs[g.node(i, row)] = phi.d_yy(&at, yy, uu) * (za * zb)
                        + phi.d_yu(&at, yy, uu) * (za * vb + zb * va)
                        + phi.d_uu(&at, yy, uu) * (va * vb);
                }
            }
        },
    )
}

/// The Jacobian of step `level` at the state `base`.
pub fn step_jacobian(
    problem: &ProblemSpec,
    base: &StateTrajectory,
    u: &BoundaryTrajectory,
    level: usize,
    opts: &SolverOptions,
) -> Result<StepOperator> {
    check_problem_grid(problem, &[base.grid(), u.grid()])?;
    let g = &problem.grid;
    if level == 0 {
        return Err(Error::LevelOutOfRange { level, max: g.nt });
    }
    g.check_level(level)?;
    let mut matrix = base_operator(g, opts.normal_stencil);
    let mut shift = vec![0.0; 2 * g.nx];
    boundary_shift(problem, base, u, level, &mut shift);
    for (slot, s) in shift.iter().enumerate() {
        let node = boundary_node(g, slot);
        let pos = matrix.position(node, node).expect("diagonal present");
        matrix.values_mut()[pos] += s;
    }
    Ok(StepOperator {
        matrix,
        kinds: row_kinds(g),
    })
}

/// Data for the manufactured solution
/// `y*(x1, x2, t) = exp(-t) (2 + cos(2 pi x1 / L) cos(pi x2))`, used with `phi = u`.
#[derive(Clone, Debug)]
pub struct ManufacturedSolution {
    pub exact: StateTrajectory,
    pub source: StateTrajectory,
    pub control: BoundaryTrajectory,
    pub initial: Array2<f64>,
}

/// Evaluate the manufactured solution and the data that reproduce it.
///
/// `y*` has zero normal derivative on both circles, so the boundary control
/// is `d_t y* - kappa d_x1^2 y*`.
pub fn manufactured_solution(grid: &Grid) -> ManufacturedSolution {
    let k = 2.0 * PI / grid.domain.length;
    let kappa = grid.domain.kappa;
    let exact_at = |x1: f64, x2: f64, t: f64| (-t).exp() * (2.0 + (k * x1).cos() * (PI * x2).cos());
    let exact = StateTrajectory::from_fn(grid, |p| exact_at(p.x1, p.x2, p.t));
    let source = StateTrajectory::from_fn(grid, |p| {
        let cc = (k * p.x1).cos() * (PI * p.x2).cos();
        (-p.t).exp() * (-(2.0 + cc) + (k * k + PI * PI) * cc)
    });
    let control = BoundaryTrajectory::from_fn(grid, |p| {
        let c = (k * p.x1).cos();
        let sign = match p.side {
            Side::Bottom => 1.0,
            Side::Top => -1.0,
        };
        (-p.t).exp() * (-(2.0 + sign * c) + kappa * k * k * sign * c)
    });
    let initial = crate::grid::snapshot_from_fn(grid, |x1, x2| exact_at(x1, x2, 0.0));
    ManufacturedSolution {
        exact,
        source,
        control,
        initial,
    }
}

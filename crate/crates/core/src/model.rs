//! Problem data: the boundary source, objective and constraint integrands,
//! control bounds and the quadratic tracking preset.
//!
//! Every integrand is supplied together with its partial derivatives.
//! [`validate`] samples them on a lattice, checks the sign condition
//! `d(phi)/dy <= 0`, and cross-checks each supplied derivative against
//! central differences.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{BoundaryPoint, BoundaryTrajectory, Grid, Side, StateTrajectory, VolumePoint};

/// A function `g(point, y, u)` on `Sigma` with its first and second partials.
///
/// Used both for the boundary source `phi` and for the boundary part `q` of
/// the objective.
pub trait SurfaceTerm: Send + Sync {
    fn value(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
    fn d_y(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
    fn d_u(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
    fn d_yy(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
    fn d_yu(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
    fn d_uu(&self, at: &BoundaryPoint, y: f64, u: f64) -> f64;
}

/// A function `a(point, y)` of the state only, with its first two derivatives.
pub trait StateTerm<P>: Send + Sync {
    fn value(&self, at: &P, y: f64) -> f64;
    fn d_y(&self, at: &P, y: f64) -> f64;
    fn d_yy(&self, at: &P, y: f64) -> f64;
}

pub type VolumeTerm = dyn StateTerm<VolumePoint>;
pub type BoundaryStateTerm = dyn StateTerm<BoundaryPoint>;

/// Ranges of `y` and `u` over which integrands are sampled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRanges {
    pub y: (f64, f64),
    pub u: (f64, f64),
}

impl Default for SampleRanges {
    fn default() -> Self {
        Self {
            y: (-2.0, 2.0),
            u: (-2.0, 2.0),
        }
    }
}

impl SampleRanges {
    fn lattice(range: (f64, f64)) -> impl Iterator<Item = f64> {
        (0..10).map(move |k| range.0 + (range.1 - range.0) * k as f64 / 9.0)
    }
}

fn sample_boundary_points(grid: &Grid) -> Vec<BoundaryPoint> {
    (0..10)
        .map(|k| {
            let level = k * grid.nt / 9;
            let side = Side::ALL[k % 2];
            let i = (k * grid.nx) / 10;
            grid.boundary_point(level, side, i)
        })
        .collect()
}

fn sample_volume_points(grid: &Grid) -> Vec<VolumePoint> {
    (0..10)
        .map(|k| {
            let level = k * grid.nt / 9;
            let j = (k * (grid.ny - 1)) / 9;
            let i = (k * grid.nx) / 10;
            grid.volume_point(level, j, i)
        })
        .collect()
}

fn describe_boundary(at: &BoundaryPoint, y: f64, u: f64) -> String {
    format!(
        "{:?} circle, x1={:.4}, t={:.4}, y={:.4}, u={:.4}",
        at.side, at.x1, at.t, y, u
    )
}

/// The Venttsel boundary source `phi(s, t, y, u)`.
#[derive(Clone)]
pub struct Nonlinearity {
    term: Arc<dyn SurfaceTerm>,
    ranges: SampleRanges,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("ranges", &self.ranges)
            .finish_non_exhaustive()
    }
}

impl Nonlinearity {
    /// Wrap `term`, rejecting it if `d(phi)/dy > 0` anywhere on the
    /// 10 x 10 x 10 sample lattice (boundary nodes x `y` x `u`).
    pub fn new(term: Arc<dyn SurfaceTerm>, grid: &Grid, ranges: SampleRanges) -> Result<Self> {
        let nl = Self { term, ranges };
        if let Some(v) = nl.sign_violations(grid).into_iter().next() {
            if let Violation::SignCondition { location, value } = v {
                return Err(Error::AssumptionViolated { location, value });
            }
        }
        Ok(nl)
    }

    /// Wrap `term` without checking the sign condition. [`validate`] still reports violations.
    pub fn unchecked(term: Arc<dyn SurfaceTerm>, ranges: SampleRanges) -> Self {
        Self { term, ranges }
    }

    pub fn ranges(&self) -> SampleRanges {
        self.ranges
    }

    pub fn term(&self) -> &dyn SurfaceTerm {
        self.term.as_ref()
    }

    fn sign_violations(&self, grid: &Grid) -> Vec<Violation> {
        let mut out = Vec::new();
        for at in sample_boundary_points(grid) {
            for y in SampleRanges::lattice(self.ranges.y) {
                for u in SampleRanges::lattice(self.ranges.u) {
                    let value = self.term.d_y(&at, y, u);
                    if !(value <= 0.0) {
                        out.push(Violation::SignCondition {
                            location: describe_boundary(&at, y, u),
                            value,
                        });
                    }
                }
            }
        }
        out
    }
}

impl std::ops::Deref for Nonlinearity {
    type Target = dyn SurfaceTerm;

    fn deref(&self) -> &Self::Target {
        self.term.as_ref()
    }
}

/// `J(u) = int_Q p(y) + int_Sigma q(y, u)`.
#[derive(Clone)]
pub struct ObjectiveSpec {
    pub volume: Arc<VolumeTerm>,
    pub surface: Arc<dyn SurfaceTerm>,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ObjectiveSpec { .. }")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `F_i(u) = 0`
    Equality,
    /// `F_i(u) <= 0`
    Inequality,
}

/// `F(u) = int_Q a(y) + int_Sigma b(y) - offset`.
#[derive(Clone)]
pub struct Constraint {
    pub volume: Arc<VolumeTerm>,
    pub surface: Arc<BoundaryStateTerm>,
    pub offset: f64,
    pub kind: ConstraintKind,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint")
            .field("offset", &self.offset)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// State constraints, equalities first.
#[derive(Clone, Debug)]
pub struct ConstraintSpec {
    entries: Vec<Constraint>,
    equalities: usize,
}

impl ConstraintSpec {
    pub fn new(entries: Vec<Constraint>) -> Result<Self> {
        let equalities = entries
            .iter()
            .take_while(|c| c.kind == ConstraintKind::Equality)
            .count();
        if entries[equalities..]
            .iter()
            .any(|c| c.kind == ConstraintKind::Equality)
        {
            return Err(Error::InvalidParameter(
                "equality constraints must precede inequality constraints".into(),
            ));
        }
        Ok(Self {
            entries,
            equalities,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of equality constraints (they occupy indices `0..k`).
    pub fn equalities(&self) -> usize {
        self.equalities
    }

    pub fn get(&self, index: usize) -> Result<&Constraint> {
        self.entries.get(index).ok_or(Error::ConstraintOutOfRange {
            index,
            count: self.entries.len(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.entries.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlBounds {
    pub lower: BoundaryTrajectory,
    pub upper: BoundaryTrajectory,
}

impl ControlBounds {
    pub fn new(lower: BoundaryTrajectory, upper: BoundaryTrajectory) -> Result<Self> {
        let bounds = Self { lower, upper };
        if let Some(loc) = bounds.first_inversion() {
            return Err(Error::InvalidParameter(format!(
                "lower bound exceeds upper bound at {loc}"
            )));
        }
        Ok(bounds)
    }

    /// Bounds that are not checked for ordering; [`validate`] reports inversions.
    pub fn unchecked(lower: BoundaryTrajectory, upper: BoundaryTrajectory) -> Self {
        Self { lower, upper }
    }

    pub fn uniform(grid: &Grid, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            BoundaryTrajectory::constant(grid, lower),
            BoundaryTrajectory::constant(grid, upper),
        )
    }

    /// Bounds at `-inf` and `+inf`.
    pub fn unbounded(grid: &Grid) -> Self {
        Self {
            lower: BoundaryTrajectory::constant(grid, f64::NEG_INFINITY),
            upper: BoundaryTrajectory::constant(grid, f64::INFINITY),
        }
    }

    pub fn project(&self, u: &BoundaryTrajectory) -> BoundaryTrajectory {
        u.clip(&self.lower, &self.upper)
    }

    fn first_inversion(&self) -> Option<String> {
        let grid = self.lower.grid();
        for ((n, s, i), &lo) in self.lower.values().indexed_iter() {
            if lo > self.upper.values()[[n, s, i]] {
                let p = grid.boundary_point(n, Side::ALL[s], i);
                return Some(format!("{:?} circle, x1={:.4}, t={:.4}", p.side, p.x1, p.t));
            }
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: Grid,
    /// Source `f` tabulated on every node of `Q`.
    pub source: StateTrajectory,
    /// Initial field on `Omega-bar`, shape `(ny, nx)`.
    pub initial: Array2<f64>,
    pub nonlinearity: Nonlinearity,
    pub objective: ObjectiveSpec,
    pub bounds: Option<ControlBounds>,
    pub constraints: Option<ConstraintSpec>,
}

impl ProblemSpec {
    pub fn new(
        grid: Grid,
        source: StateTrajectory,
        initial: Array2<f64>,
        nonlinearity: Nonlinearity,
        objective: ObjectiveSpec,
    ) -> Result<Self> {
        if source.grid() != &grid {
            return Err(Error::ShapeMismatch {
                expected: grid.describe(),
                found: source.grid().describe(),
            });
        }
        if initial.dim() != (grid.ny, grid.nx) {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {})", grid.ny, grid.nx),
                found: format!("{:?}", initial.dim()),
            });
        }
        if initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial field is not finite".into()));
        }
        Ok(Self {
            grid,
            source,
            initial,
            nonlinearity,
            objective,
            bounds: None,
            constraints: None,
        })
    }

    pub fn with_bounds(mut self, bounds: ControlBounds) -> Result<Self> {
        bounds.lower.check_grid(&self.grid)?;
        bounds.upper.check_grid(&self.grid)?;
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn with_constraints(mut self, constraints: ConstraintSpec) -> Self {
        self.constraints = Some(constraints);
        self
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }

    pub fn with_objective(mut self, objective: ObjectiveSpec) -> Self {
        self.objective = objective;
        self
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.as_ref().map_or(0, ConstraintSpec::len)
    }
}

/// Tracking-type objective `1/2 int_Q (y - y_g)^2 + beta/2 int_Sigma u^2` with `phi = u`.
#[derive(Clone, Debug)]
pub struct QuadraticTrackingPreset {
    pub target: StateTrajectory,
    pub beta: f64,
}

pub fn make_quadratic_problem(
    grid: &Grid,
    source: StateTrajectory,
    initial: Array2<f64>,
    preset: QuadraticTrackingPreset,
) -> Result<ProblemSpec> {
    if !(preset.beta.is_finite() && preset.beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {}",
            preset.beta
        )));
    }
    if preset.target.grid() != grid {
        return Err(Error::ShapeMismatch {
            expected: grid.describe(),
            found: preset.target.grid().describe(),
        });
    }
    let nonlinearity = Nonlinearity::new(Arc::new(presets::IdentityControl), grid, SampleRanges::default())?;
    let objective = ObjectiveSpec {
        volume: Arc::new(presets::Tracking::new(preset.target)),
        surface: Arc::new(presets::ControlCost { beta: preset.beta }),
    };
    ProblemSpec::new(grid.clone(), source, initial, nonlinearity, objective)
}

/// One finding of [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SignCondition { location: String, value: f64 },
    BoundsInverted { location: String },
    DerivativeMismatch {
        term: &'static str,
        derivative: &'static str,
        location: String,
        supplied: f64,
        numerical: f64,
    },
    NonFinite { term: &'static str, location: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn sign_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::SignCondition { .. }))
    }
}

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-4;

fn close(supplied: f64, numerical: f64) -> bool {
    (supplied - numerical).abs() <= FD_RTOL * supplied.abs().max(numerical.abs()).max(1.0)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn check_surface(
    name: &'static str,
    term: &dyn SurfaceTerm,
    grid: &Grid,
    ranges: SampleRanges,
    report: &mut ValidationReport,
) {
    for at in sample_boundary_points(grid) {
        for y in SampleRanges::lattice(ranges.y) {
            for u in SampleRanges::lattice(ranges.u) {
                let location = describe_boundary(&at, y, u);
                let supplied = [
                    term.value(&at, y, u),
                    term.d_y(&at, y, u),
                    term.d_u(&at, y, u),
                    term.d_yy(&at, y, u),
                    term.d_yu(&at, y, u),
                    term.d_uu(&at, y, u),
                ];
                if supplied.iter().any(|v| !v.is_finite()) {
                    report.violations.push(Violation::NonFinite { term: name, location });
                    continue;
                }
                let numerical = [
                    ("d_y", supplied[1], central(|s| term.value(&at, s, u), y)),
                    ("d_u", supplied[2], central(|s| term.value(&at, y, s), u)),
                    ("d_yy", supplied[3], central(|s| term.d_y(&at, s, u), y)),
                    ("d_yu", supplied[4], central(|s| term.d_y(&at, y, s), u)),
                    ("d_uu", supplied[5], central(|s| term.d_u(&at, y, s), u)),
                ];
                for (derivative, s, n) in numerical {
                    if !close(s, n) {
                        report.violations.push(Violation::DerivativeMismatch {
                            term: name,
                            derivative,
                            location: location.clone(),
                            supplied: s,
                            numerical: n,
                        });
                    }
                }
            }
        }
    }
}

fn check_state<P: fmt::Debug>(
    name: &'static str,
    term: &dyn StateTerm<P>,
    points: &[P],
    ranges: SampleRanges,
    report: &mut ValidationReport,
) {
    for at in points {
        for y in SampleRanges::lattice(ranges.y) {
            let location = format!("{at:?}, y={y:.4}");
            let supplied = [term.value(at, y), term.d_y(at, y), term.d_yy(at, y)];
            if supplied.iter().any(|v| !v.is_finite()) {
                report.violations.push(Violation::NonFinite { term: name, location });
                continue;
            }
            for (derivative, s, n) in [
                ("d_y", supplied[1], central(|s| term.value(at, s), y)),
                ("d_yy", supplied[2], central(|s| term.d_y(at, s), y)),
            ] {
                if !close(s, n) {
                    report.violations.push(Violation::DerivativeMismatch {
                        term: name,
                        derivative,
                        location: location.clone(),
                        supplied: s,
                        numerical: n,
                    });
                }
            }
        }
    }
}

/// Sample the problem data and report every violation found. Never fails.
pub fn validate(problem: &ProblemSpec) -> ValidationReport {
    let grid = &problem.grid;
    let ranges = problem.nonlinearity.ranges();
    let mut report = ValidationReport {
        violations: problem.nonlinearity.sign_violations(grid),
    };
    if let Some(bounds) = &problem.bounds {
        if let Some(location) = bounds.first_inversion() {
            report.violations.push(Violation::BoundsInverted { location });
        }
    }
    check_surface("phi", problem.nonlinearity.term(), grid, ranges, &mut report);
    check_surface("q", problem.objective.surface.as_ref(), grid, ranges, &mut report);
    let volume_points = sample_volume_points(grid);
    let boundary_points = sample_boundary_points(grid);
    check_state("p", problem.objective.volume.as_ref(), &volume_points, ranges, &mut report);
    if let Some(constraints) = &problem.constraints {
        for c in constraints.iter() {
            check_state("a", c.volume.as_ref(), &volume_points, ranges, &mut report);
            check_state("b", c.surface.as_ref(), &boundary_points, ranges, &mut report);
        }
    }
    report
}

/// Ready-made integrands.
pub mod presets {
    use super::*;

    /// `phi = u`.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct IdentityControl;

    impl SurfaceTerm for IdentityControl {
        fn value(&self, _: &BoundaryPoint, _y: f64, u: f64) -> f64 {
            u
        }
        fn d_y(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_u(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            1.0
        }
        fn d_yy(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_uu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
    }

    /// `phi = u - y^3`.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct CubicDamping;

    impl SurfaceTerm for CubicDamping {
        fn value(&self, _: &BoundaryPoint, y: f64, u: f64) -> f64 {
            u - y * y * y
        }
        fn d_y(&self, _: &BoundaryPoint, y: f64, _: f64) -> f64 {
            -3.0 * y * y
        }
        fn d_u(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            1.0
        }
        fn d_yy(&self, _: &BoundaryPoint, y: f64, _: f64) -> f64 {
            -6.0 * y
        }
        fn d_yu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_uu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
    }

    /// `phi = sigma(s, t) * y + theta(s, t)` with tabulated coefficients; ignores `u`.
    #[derive(Clone, Debug)]
    pub struct LinearFeedback {
        pub sigma: BoundaryTrajectory,
        pub theta: BoundaryTrajectory,
    }

    impl SurfaceTerm for LinearFeedback {
        fn value(&self, at: &BoundaryPoint, y: f64, _: f64) -> f64 {
            self.sigma.at(at.level, at.side, at.i) * y + self.theta.at(at.level, at.side, at.i)
        }
        fn d_y(&self, at: &BoundaryPoint, _: f64, _: f64) -> f64 {
            self.sigma.at(at.level, at.side, at.i)
        }
        fn d_u(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yy(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_uu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
    }

    /// `p = (y - y_g)^2 / 2` with a tabulated target.
    #[derive(Clone, Debug)]
    pub struct Tracking {
        target: StateTrajectory,
    }

    impl Tracking {
        pub fn new(target: StateTrajectory) -> Self {
            Self { target }
        }

        pub fn target(&self) -> &StateTrajectory {
            &self.target
        }

        fn at(&self, p: &VolumePoint) -> f64 {
            self.target.values()[[p.level, p.j, p.i]]
        }
    }

    impl StateTerm<VolumePoint> for Tracking {
        fn value(&self, at: &VolumePoint, y: f64) -> f64 {
            let d = y - self.at(at);
            0.5 * d * d
        }
        fn d_y(&self, at: &VolumePoint, y: f64) -> f64 {
            y - self.at(at)
        }
        fn d_yy(&self, _: &VolumePoint, _: f64) -> f64 {
            1.0
        }
    }

    /// `q = beta * u^2 / 2`.
    #[derive(Clone, Copy, Debug)]
    pub struct ControlCost {
        pub beta: f64,
    }

    impl SurfaceTerm for ControlCost {
        fn value(&self, _: &BoundaryPoint, _: f64, u: f64) -> f64 {
            0.5 * self.beta * u * u
        }
        fn d_y(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_u(&self, _: &BoundaryPoint, _: f64, u: f64) -> f64 {
            self.beta * u
        }
        fn d_yy(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_uu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            self.beta
        }
    }

    /// `a = weight * y` (or `b = weight * y` on the boundary).
    #[derive(Clone, Copy, Debug)]
    pub struct LinearState {
        pub weight: f64,
    }

    impl<P> StateTerm<P> for LinearState {
        fn value(&self, _: &P, y: f64) -> f64 {
            self.weight * y
        }
        fn d_y(&self, _: &P, _: f64) -> f64 {
            self.weight
        }
        fn d_yy(&self, _: &P, _: f64) -> f64 {
            0.0
        }
    }

    /// The zero integrand.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct Zero;

    impl<P> StateTerm<P> for Zero {
        fn value(&self, _: &P, _: f64) -> f64 {
            0.0
        }
        fn d_y(&self, _: &P, _: f64) -> f64 {
            0.0
        }
        fn d_yy(&self, _: &P, _: f64) -> f64 {
            0.0
        }
    }

    impl SurfaceTerm for Zero {
        fn value(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_y(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_u(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yy(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_yu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
        fn d_uu(&self, _: &BoundaryPoint, _: f64, _: f64) -> f64 {
            0.0
        }
    }
}

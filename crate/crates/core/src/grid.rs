//! Space-time grid on the periodic strip `[0, L) x [0, 1] x [0, T]`.
//!
//! The strip is periodic in `x1` and bounded by two circles, `x2 = 0`
//! ([`Side::Bottom`]) and `x2 = 1` ([`Side::Top`]). Node `(i, j)` sits at
//! `(i * hx, j * hy)`; rows `j = 0` and `j = ny - 1` are the boundary.
//!
//! Quadrature is trapezoidal in `t` and `x2` and the rectangle rule in the
//! periodic direction. Boundary rows carry weight `hy / 2` in volume
//! integrals and full weight in boundary integrals.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// One of the two boundary circles of the strip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Bottom = 0,
    Top = 1,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Bottom, Side::Top];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Grid row `j` holding this boundary component.
    pub fn row(self, ny: usize) -> usize {
        match self {
            Side::Bottom => 0,
            Side::Top => ny - 1,
        }
    }

    /// Row index of the first interior neighbour, stepping `depth` rows inward.
    pub fn inward(self, ny: usize, depth: usize) -> usize {
        match self {
            Side::Bottom => depth,
            Side::Top => ny - 1 - depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    /// Period length in `x1`.
    pub length: f64,
    /// Final time.
    pub final_time: f64,
    /// Boundary diffusivity in front of the Laplace-Beltrami term.
    pub kappa: f64,
}

impl DomainSpec {
    pub fn new(length: f64, final_time: f64, kappa: f64) -> Result<Self> {
        let spec = Self {
            length,
            final_time,
            kappa,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        for (name, value) in [
            ("length", self.length),
            ("final_time", self.final_time),
            ("kappa", self.kappa),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidDomain(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureWeights {
    /// Trapezoid weights over `[0, T]`, one per time level.
    pub time: Vec<f64>,
    /// Rectangle weights over the period, one per column.
    pub x1: Vec<f64>,
    /// Trapezoid weights over `[0, 1]`, one per row.
    pub x2: Vec<f64>,
}

/// A volume node together with its coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumePoint {
    pub level: usize,
    pub j: usize,
    pub i: usize,
    pub x1: f64,
    pub x2: f64,
    pub t: f64,
}

/// A boundary node together with its coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub level: usize,
    pub side: Side,
    pub i: usize,
    pub x1: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub domain: DomainSpec,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub hx: f64,
    pub hy: f64,
    pub dt: f64,
    pub weights: QuadratureWeights,
}

impl Grid {
    pub fn new(domain: DomainSpec, nx: usize, ny: usize, nt: usize) -> Result<Self> {
        domain.check()?;
        if nx < 4 || ny < 4 || nt < 1 {
            return Err(Error::InvalidGrid(format!(
                "need nx >= 4, ny >= 4, nt >= 1; got nx={nx}, ny={ny}, nt={nt}"
            )));
        }
        let hx = domain.length / nx as f64;
        let hy = 1.0 / (ny - 1) as f64;
        let dt = domain.final_time / nt as f64;

        let trapezoid = |n: usize, h: f64| {
            (0..n)
                .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
                .collect::<Vec<_>>()
        };
        let weights = QuadratureWeights {
            time: trapezoid(nt + 1, dt),
            x1: vec![hx; nx],
            x2: trapezoid(ny, hy),
        };
        Ok(Self {
            domain,
            nx,
            ny,
            nt,
            hx,
            hy,
            dt,
            weights,
        })
    }

    /// Number of unknowns per time level.
    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of node `(i, j)` within one time level.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_boundary_row(&self, j: usize) -> bool {
        j == 0 || j == self.ny - 1
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn volume_point(&self, level: usize, j: usize, i: usize) -> VolumePoint {
        VolumePoint {
            level,
            j,
            i,
            x1: i as f64 * self.hx,
            x2: j as f64 * self.hy,
            t: self.time(level),
        }
    }

    pub fn boundary_point(&self, level: usize, side: Side, i: usize) -> BoundaryPoint {
        BoundaryPoint {
            level,
            side,
            i,
            x1: i as f64 * self.hx,
            t: self.time(level),
        }
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level > self.nt {
            Err(Error::LevelOutOfRange {
                level,
                max: self.nt,
            })
        } else {
            Ok(())
        }
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.describe(),
                found: other.describe(),
            })
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "grid(L={}, T={}, kappa={}, nx={}, ny={}, nt={})",
            self.domain.length, self.domain.final_time, self.domain.kappa, self.nx, self.ny, self.nt
        )
    }

    /// Volume weight of node `(i, j)`: `hx * w_x2(j)`.
    #[inline]
    pub fn volume_weight(&self, j: usize) -> f64 {
        self.hx * self.weights.x2[j]
    }

    /// Quadrature over `Q`.
    pub fn integrate_q(&self, field: &StateTrajectory) -> Result<f64> {
        self.check_same(&field.grid)?;
        Ok(self.integrate_q_values(field.values.view()))
    }

    pub(crate) fn integrate_q_values(&self, values: ndarray::ArrayView3<f64>) -> f64 {
        let mut total = 0.0;
        for (level, slab) in values.axis_iter(Axis(0)).enumerate() {
            total += self.weights.time[level] * self.integrate_omega_slice(slab);
        }
        total
    }

    /// Quadrature over `Sigma`, both circles included.
    pub fn integrate_sigma(&self, field: &BoundaryTrajectory) -> Result<f64> {
        self.check_same(&field.grid)?;
        Ok(self.integrate_sigma_values(field.values.view()))
    }

    pub(crate) fn integrate_sigma_values(&self, values: ndarray::ArrayView3<f64>) -> f64 {
        let mut total = 0.0;
        for (level, slab) in values.axis_iter(Axis(0)).enumerate() {
            total += self.weights.time[level] * self.hx * slab.sum();
        }
        total
    }

    /// Discrete `L2(Sigma)` inner product; the pairing in which gradients are reported.
    pub fn inner_sigma(&self, a: &BoundaryTrajectory, b: &BoundaryTrajectory) -> Result<f64> {
        self.check_same(&a.grid)?;
        self.check_same(&b.grid)?;
        let product = &a.values * &b.values;
        Ok(self.integrate_sigma_values(product.view()))
    }

    pub fn norm_sigma(&self, a: &BoundaryTrajectory) -> Result<f64> {
        Ok(self.inner_sigma(a, a)?.sqrt())
    }

    fn integrate_omega_slice(&self, slab: ArrayView2<f64>) -> f64 {
        let rows: f64 = slab
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(j, row)| if self.is_boundary_row(j) { 0.5 * row.sum() } else { row.sum() })
            .sum();
        self.domain.length * (rows / ((self.ny - 1) * self.nx) as f64)
    }

    /// Integrals of one time level over `Omega` and over `Gamma`.
    pub fn integrate_omega_and_gamma_at(
        &self,
        field: &StateTrajectory,
        level: usize,
    ) -> Result<(f64, f64)> {
        self.check_same(&field.grid)?;
        self.check_level(level)?;
        let slab = field.values.index_axis(Axis(0), level);
        Ok(self.integrate_snapshot(slab))
    }

    /// Same as [`Grid::integrate_omega_and_gamma_at`] for a bare `ny x nx` slice.
    pub fn integrate_snapshot(&self, slab: ArrayView2<f64>) -> (f64, f64) {
        let volume = self.integrate_omega_slice(slab);
        let boundary = Side::ALL
            .iter()
            .map(|side| self.domain.length * (slab.row(side.row(self.ny)).sum() / self.nx as f64))
            .sum();
        (volume, boundary)
    }

    /// Restriction of a volume field to `Sigma`.
    pub fn trace(&self, field: &StateTrajectory) -> Result<BoundaryTrajectory> {
        self.check_same(&field.grid)?;
        Ok(field.trace())
    }
}

/// A field on every node of `Q`, shape `(nt + 1, ny, nx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub(crate) values: Array3<f64>,
    pub(crate) grid: Grid,
}

impl StateTrajectory {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: Array3::zeros((grid.nt + 1, grid.ny, grid.nx)),
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: Array3::from_elem((grid.nt + 1, grid.ny, grid.nx), value),
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&VolumePoint) -> f64) -> Self {
        let values = Array3::from_shape_fn((grid.nt + 1, grid.ny, grid.nx), |(n, j, i)| {
            f(&grid.volume_point(n, j, i))
        });
        Self {
            values,
            grid: grid.clone(),
        }
    }

    pub fn from_array(grid: &Grid, values: Array3<f64>) -> Result<Self> {
        let expected = (grid.nt + 1, grid.ny, grid.nx);
        if values.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", values.dim()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "state trajectory has non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    pub fn level(&self, level: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), level)
    }

    /// Level `n` as a flat slice in node order `j * nx + i`.
    pub fn level_slice(&self, level: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.values.as_slice().expect("standard layout")[level * n..(level + 1) * n]
    }

    pub(crate) fn level_slice_mut(&mut self, level: usize) -> &mut [f64] {
        let n = self.grid.nodes();
        &mut self.values.as_slice_mut().expect("standard layout")[level * n..(level + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute value over space at one time level.
    pub fn max_abs_at(&self, level: usize) -> f64 {
        self.level(level).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> BoundaryTrajectory {
        let g = &self.grid;
        let values = Array3::from_shape_fn((g.nt + 1, 2, g.nx), |(n, s, i)| {
            self.values[[n, Side::ALL[s].row(g.ny), i]]
        });
        BoundaryTrajectory {
            values,
            grid: g.clone(),
        }
    }
}

/// A field on `Sigma`, shape `(nt + 1, 2, nx)`; component 0 is the bottom circle.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrajectory {
    pub(crate) values: Array3<f64>,
    pub(crate) grid: Grid,
}

impl BoundaryTrajectory {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: Array3::from_elem((grid.nt + 1, 2, grid.nx), value),
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&BoundaryPoint) -> f64) -> Self {
        let values = Array3::from_shape_fn((grid.nt + 1, 2, grid.nx), |(n, s, i)| {
            f(&grid.boundary_point(n, Side::ALL[s], i))
        });
        Self {
            values,
            grid: grid.clone(),
        }
    }

    pub fn from_array(grid: &Grid, values: Array3<f64>) -> Result<Self> {
        let expected = (grid.nt + 1, 2, grid.nx);
        if values.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", values.dim()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "boundary trajectory has non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, level: usize, side: Side, i: usize) -> f64 {
        self.values[[level, side.index(), i]]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_same(&self.grid)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &BoundaryTrajectory) -> BoundaryTrajectory {
        BoundaryTrajectory {
            values: &self.values + &(&other.values * alpha),
            grid: self.grid.clone(),
        }
    }

    pub fn scale(&self, alpha: f64) -> BoundaryTrajectory {
        BoundaryTrajectory {
            values: &self.values * alpha,
            grid: self.grid.clone(),
        }
    }

    pub fn zip_map(
        &self,
        other: &BoundaryTrajectory,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> BoundaryTrajectory {
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, &b| *a = f(*a, b));
        BoundaryTrajectory {
            values,
            grid: self.grid.clone(),
        }
    }

    /// Pointwise projection onto `[lower, upper]`.
    pub fn clip(&self, lower: &BoundaryTrajectory, upper: &BoundaryTrajectory) -> BoundaryTrajectory {
        let mut values = self.values.clone();
        ndarray::Zip::from(&mut values)
            .and(&lower.values)
            .and(&upper.values)
            .for_each(|v, &lo, &hi| *v = v.max(lo).min(hi));
        BoundaryTrajectory {
            values,
            grid: self.grid.clone(),
        }
    }
}

/// Build an initial field on `Omega-bar` from a function of `(x1, x2)`.
pub fn snapshot_from_fn(grid: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
        f(i as f64 * grid.hx, j as f64 * grid.hy)
    })
}

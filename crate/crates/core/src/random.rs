//! Seeded random directions and smooth random data for verification runs.

use ndarray::Array2;
use rand::Rng;
use std::f64::consts::PI;

use crate::adjoint::{AdjointData, PrincipalData};
use crate::grid::{BoundaryTrajectory, Grid, StateTrajectory};

/// Uniform entries in `[-1, 1]`, rescaled to unit sup-norm.
pub fn random_direction<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> BoundaryTrajectory {
    let mut v = BoundaryTrajectory::from_fn(grid, |_| rng.random_range(-1.0..=1.0));
    let m = v.max_abs();
    if m > 0.0 {
        v.values_mut().mapv_inplace(|x| x / m);
    }
    v
}

/// A random element of a small space of smooth functions: products of
/// `{1, cos(2 pi x1 / L + phase)}`, `{1, cos(pi x2)}` and `{1, t / T}` with
/// coefficients uniform in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct SmoothField {
    coeffs: [f64; 8],
    phase: f64,
}

impl SmoothField {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut coeffs = [0.0; 8];
        for c in &mut coeffs {
            *c = rng.random_range(-1.0..=1.0);
        }
        Self {
            coeffs,
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    pub fn eval(&self, grid: &Grid, x1: f64, x2: f64, t: f64) -> f64 {
        let bx = [1.0, (2.0 * PI * x1 / grid.domain.length + self.phase).cos()];
        let by = [1.0, (PI * x2).cos()];
        let bt = [1.0, t / grid.domain.final_time];
        let mut total = 0.0;
        for (a, xa) in bx.iter().enumerate() {
            for (b, yb) in by.iter().enumerate() {
                for (c, tc) in bt.iter().enumerate() {
                    total += self.coeffs[4 * a + 2 * b + c] * xa * yb * tc;
                }
            }
        }
        total
    }

    pub fn on_q(&self, grid: &Grid) -> StateTrajectory {
        StateTrajectory::from_fn(grid, |p| self.eval(grid, p.x1, p.x2, p.t))
    }

    /// Evaluated on `Sigma`, using `x2 = 0` and `x2 = 1` for the two circles.
    pub fn on_sigma(&self, grid: &Grid) -> BoundaryTrajectory {
        BoundaryTrajectory::from_fn(grid, |p| {
            let x2 = p.side.row(grid.ny) as f64 * grid.hy;
            self.eval(grid, p.x1, x2, p.t)
        })
    }

    pub fn at_time(&self, grid: &Grid, t: f64) -> Array2<f64> {
        crate::grid::snapshot_from_fn(grid, |x1, x2| self.eval(grid, x1, x2, t))
    }
}

/// Random smooth data `(f, h, y0)` for the principal system.
pub fn random_principal_data<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> PrincipalData {
    let f = SmoothField::sample(rng);
    let h = SmoothField::sample(rng);
    let y0 = SmoothField::sample(rng);
    PrincipalData {
        f: f.on_q(grid),
        h: h.on_sigma(grid),
        initial: y0.at_time(grid, 0.0),
    }
}

/// Random smooth data `(g, r, z_T)` for the backward system.
pub fn random_adjoint_data<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> AdjointData {
    let g = SmoothField::sample(rng);
    let r = SmoothField::sample(rng);
    let zt = SmoothField::sample(rng);
    AdjointData {
        g: g.on_q(grid),
        r: r.on_sigma(grid),
        terminal: zt.at_time(grid, grid.domain.final_time),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn directions_have_unit_sup_norm_and_are_reproducible() {
        let g = Grid::new(DomainSpec::new(1.0, 1.0, 1.0).unwrap(), 8, 5, 6).unwrap();
        let a = random_direction(&g, &mut ChaCha8Rng::seed_from_u64(42));
        let b = random_direction(&g, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert_eq!(a.max_abs(), 1.0);
    }

    #[test]
    fn smooth_field_traces_agree_with_volume_values() {
        let g = Grid::new(DomainSpec::new(2.0, 0.5, 1.0).unwrap(), 8, 5, 6).unwrap();
        let field = SmoothField::sample(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(field.on_q(&g).trace(), field.on_sigma(&g));
    }
}

//! Sparse storage for step operators and a banded LU factorization.
//!
//! Nodes are renumbered so that the periodic `x1` direction does not create
//! wrap-around fill: columns are visited in the folded order
//! `0, nx-1, 1, nx-2, ...`, which keeps every periodic neighbour within two
//! positions. Combined with row-fastest numbering the half bandwidth is `2 * ny`.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("nonempty") += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(col, _)| col == c).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate().take(self.n) {
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.vals
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Position of entry `(r, c)` in the value array.
    pub(crate) fn position(&self, r: usize, c: usize) -> Option<usize> {
        (self.row_ptr[r]..self.row_ptr[r + 1]).find(|&k| self.cols[k] == c)
    }
}

/// Folded renumbering of the `nx * ny` nodes of one time level.
#[derive(Clone, Debug)]
pub(crate) struct Ordering {
    to_band: Vec<usize>,
    bandwidth: usize,
}

impl Ordering {
    pub(crate) fn folded(nx: usize, ny: usize) -> Self {
        let mut position = vec![0; nx];
        for (p, slot) in (0..nx).map(|k| if k % 2 == 0 { k / 2 } else { nx - 1 - k / 2 }).enumerate() {
            position[slot] = p;
        }
        let mut to_band = vec![0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                to_band[j * nx + i] = position[i] * ny + j;
            }
        }
        Self {
            to_band,
            bandwidth: 2 * ny,
        }
    }

    #[inline]
    pub(crate) fn band_index(&self, node: usize) -> usize {
        self.to_band[node]
    }
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// Storage follows the LAPACK `gbtrf` layout: column `j` holds rows
/// `j - kl - ku ..= j + kl`, with `kl` extra rows reserved for pivoting fill.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            ab: vec![0.0; ld * n],
            piv: vec![0; n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld + (self.kl + self.ku + i - j)
    }

    /// Set entry `(i, j)` before factorization. Must lie inside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn clear(&mut self) {
        self.ab.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.ab[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            self.piv[j] = j + p;
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::LinearSolveFailure(format!(
                    "zero or non-finite pivot in column {j}"
                )));
            }
            let last = (j + kl + ku).min(n - 1);
            if p != 0 {
                for c in j..=last {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(j, j)];
            let col = j * self.ld + kl + ku;
            for r in 1..=km {
                self.ab[col + r] /= pivot;
            }
            for c in j + 1..=last {
                let t = self.ab[self.idx(j, c)];
                if t == 0.0 {
                    continue;
                }
                let base_c = c * self.ld + kl + ku + j - c;
                for r in 1..=km {
                    self.ab[base_c + r] -= self.ab[col + r] * t;
                }
            }
        }
        Ok(())
    }

    /// Solve `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                let col = j * self.ld + kl + ku;
                for r in 1..=km {
                    b[j + r] -= self.ab[col + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[self.idx(j, j)];
            let bj = b[j];
            if bj == 0.0 {
                continue;
            }
            for i in j.saturating_sub(kl + ku)..j {
                b[i] -= self.ab[self.idx(i, j)] * bj;
            }
        }
    }

    /// Solve `A^T x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for j in 0..n {
            let mut s = b[j];
            for i in j.saturating_sub(kl + ku)..j {
                s -= self.ab[self.idx(i, j)] * b[i];
            }
            b[j] = s / self.ab[self.idx(j, j)];
        }
        for j in (0..n).rev() {
            let km = kl.min(n - 1 - j);
            let col = j * self.ld + kl + ku;
            let mut s = b[j];
            for r in 1..=km {
                s -= self.ab[col + r] * b[j + r];
            }
            b[j] = s;
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

/// A sparse operator on one time level factored in banded form.
#[derive(Clone, Debug)]
pub(crate) struct FactoredOperator {
    ordering: Ordering,
    lu: BandedLu,
    scratch: Vec<f64>,
}

impl FactoredOperator {
    pub(crate) fn new(nx: usize, ny: usize) -> Self {
        let ordering = Ordering::folded(nx, ny);
        let bw = ordering.bandwidth;
        Self {
            lu: BandedLu::zeros(nx * ny, bw, bw),
            ordering,
            scratch: vec![0.0; nx * ny],
        }
    }

    pub(crate) fn factor(&mut self, a: &SparseMatrix) -> Result<()> {
        self.lu.clear();
        for r in 0..a.dim() {
            let br = self.ordering.band_index(r);
            for (c, v) in a.row(r) {
                self.lu.set(br, self.ordering.band_index(c), v);
            }
        }
        self.lu.factor()
    }

    pub(crate) fn solve(&mut self, b: &mut [f64], transpose: bool) {
        for (node, &v) in b.iter().enumerate() {
            self.scratch[self.ordering.band_index(node)] = v;
        }
        if transpose {
            self.lu.solve_transpose(&mut self.scratch);
        } else {
            self.lu.solve(&mut self.scratch);
        }
        for (node, v) in b.iter_mut().enumerate() {
            *v = self.scratch[self.ordering.band_index(node)];
        }
    }
}

pub(crate) fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

//! Binary dumps of state and boundary trajectories.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `VTFIELD1` |
//! | 1     | kind: `0` state on `Q`, `1` boundary on `Sigma` |
//! | 24    | dims `(d0, d1, d2)` as `u64` |
//! | 24    | `L`, `T`, `kappa` as `f64` |
//! | 24    | `nx`, `ny`, `nt` as `u64` |
//! | 8     | grid hash, first 8 bytes of SHA-256 over the six grid parameters |
//! | 8 * d0 * d1 * d2 | payload, row-major with time outermost |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;
use sha2::{Digest, Sha256};
use venttsel_core::{BoundaryTrajectory, DomainSpec, Grid, StateTrajectory};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"VTFIELD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    State,
    Boundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldFile {
    pub kind: FieldKind,
    pub grid: Grid,
    pub grid_hash: u64,
    pub values: Array3<f64>,
}

pub fn grid_hash(grid: &Grid) -> u64 {
    let mut h = Sha256::new();
    for v in [grid.domain.length, grid.domain.final_time, grid.domain.kappa] {
        h.update(v.to_le_bytes());
    }
    for n in [grid.nx, grid.ny, grid.nt] {
        h.update((n as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

impl FieldFile {
    pub fn from_state(field: &StateTrajectory) -> Self {
        Self {
            kind: FieldKind::State,
            grid: field.grid().clone(),
            grid_hash: grid_hash(field.grid()),
            values: field.values().clone(),
        }
    }

    pub fn from_boundary(field: &BoundaryTrajectory) -> Self {
        Self {
            kind: FieldKind::Boundary,
            grid: field.grid().clone(),
            grid_hash: grid_hash(field.grid()),
            values: field.values().clone(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CliError> {
        let mut buf = Vec::with_capacity(97 + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.push(match self.kind {
            FieldKind::State => 0,
            FieldKind::Boundary => 1,
        });
        for d in self.values.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        let d = &self.grid.domain;
        for v in [d.length, d.final_time, d.kappa] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for n in [self.grid.nx, self.grid.ny, self.grid.nt] {
            buf.extend_from_slice(&(n as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.grid_hash.to_le_bytes());
        for v in self.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(CliError::FieldFile("bad magic".into()));
        }
        let kind = match cur.take(1)?[0] {
            0 => FieldKind::State,
            1 => FieldKind::Boundary,
            k => return Err(CliError::FieldFile(format!("unknown kind {k}"))),
        };
        let dims = [cur.u64()? as usize, cur.u64()? as usize, cur.u64()? as usize];
        let (l, t, kappa) = (cur.f64()?, cur.f64()?, cur.f64()?);
        let (nx, ny, nt) = (cur.u64()? as usize, cur.u64()? as usize, cur.u64()? as usize);
        let stored_hash = cur.u64()?;
        let domain = DomainSpec::new(l, t, kappa).map_err(|e| CliError::FieldFile(e.to_string()))?;
        let grid = Grid::new(domain, nx, ny, nt).map_err(|e| CliError::FieldFile(e.to_string()))?;
        if grid_hash(&grid) != stored_hash {
            return Err(CliError::FieldFile("grid hash does not match the header".into()));
        }
        let expected = match kind {
            FieldKind::State => [nt + 1, ny, nx],
            FieldKind::Boundary => [nt + 1, 2, nx],
        };
        if dims != expected {
            return Err(CliError::FieldFile(format!("dims {dims:?} do not match grid, expected {expected:?}")));
        }
        let count = dims.iter().product::<usize>();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(cur.f64()?);
        }
        if cur.pos != bytes.len() {
            return Err(CliError::FieldFile("trailing bytes after payload".into()));
        }
        let values = Array3::from_shape_vec(dims, values).expect("length checked");
        Ok(Self {
            kind,
            grid,
            grid_hash: stored_hash,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    pub fn into_state(self) -> Result<StateTrajectory, CliError> {
        if self.kind != FieldKind::State {
            return Err(CliError::FieldFile("not a state field".into()));
        }
        StateTrajectory::from_array(&self.grid, self.values).map_err(|e| CliError::FieldFile(e.to_string()))
    }

    pub fn into_boundary(self) -> Result<BoundaryTrajectory, CliError> {
        if self.kind != FieldKind::Boundary {
            return Err(CliError::FieldFile("not a boundary field".into()));
        }
        BoundaryTrajectory::from_array(&self.grid, self.values).map_err(|e| CliError::FieldFile(e.to_string()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| CliError::FieldFile("truncated file".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(DomainSpec::new(2.0, 0.5, 1.0).unwrap(), 6, 4, 3).unwrap()
    }

    #[test]
    fn state_round_trip_is_exact() {
        let g = grid();
        let s = StateTrajectory::from_fn(&g, |p| (p.x1 * 3.1).sin() / (1.0 + p.t) + p.x2 * 1e-300);
        let mut buf = Vec::new();
        FieldFile::from_state(&s).write_to(&mut buf).unwrap();
        let back = FieldFile::read_from(buf.as_slice()).unwrap().into_state().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn boundary_round_trip_is_exact() {
        let g = grid();
        let b = BoundaryTrajectory::from_fn(&g, |p| p.x1 - p.t * 7.0);
        let mut buf = Vec::new();
        FieldFile::from_boundary(&b).write_to(&mut buf).unwrap();
        let back = FieldFile::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.grid_hash, grid_hash(&g));
        assert_eq!(back.into_boundary().unwrap(), b);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let g = grid();
        let mut buf = Vec::new();
        FieldFile::from_state(&StateTrajectory::zeros(&g)).write_to(&mut buf).unwrap();
        let mut bad_hash = buf.clone();
        bad_hash[81] ^= 1;
        assert!(FieldFile::read_from(bad_hash.as_slice()).is_err());
        assert!(FieldFile::read_from(&buf[..buf.len() - 1]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(FieldFile::read_from(bad_magic.as_slice()).is_err());
        let boundary = FieldFile::read_from(buf.as_slice()).unwrap().into_boundary();
        assert!(boundary.is_err());
    }

    #[test]
    fn hash_depends_on_every_parameter() {
        let g = grid();
        let h = grid_hash(&g);
        let other = Grid::new(DomainSpec::new(2.0, 0.5, 1.0).unwrap(), 6, 4, 4).unwrap();
        assert_ne!(h, grid_hash(&other));
        let other = Grid::new(DomainSpec::new(2.0, 0.5, 2.0).unwrap(), 6, 4, 3).unwrap();
        assert_ne!(h, grid_hash(&other));
    }
}

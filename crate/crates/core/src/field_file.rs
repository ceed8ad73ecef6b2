//! Binary container for gridded time series (data, states, adjoints, masks).
//!
//! Layout, all little-endian: `b"RDRD"`, then `version, nx, ny, nt_plus_1,
//! n_fields` as u32, then `hx, hy, dt` as f64, then the payload as f64 with
//! time slowest, then field, then row y, then column x. Cells outside the
//! domain hold NaN.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::SpatialGrid;

pub const MAGIC: &[u8; 4] = b"RDRD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4 + 3 * 8;

#[derive(Debug, Error)]
pub enum FieldFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("payload holds {got} bytes, header implies {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub nx: usize,
    pub ny: usize,
    pub nt_plus_1: usize,
    pub n_fields: usize,
    pub hx: f64,
    pub hy: f64,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl FieldFile {
    pub fn new(nx: usize, ny: usize, nt_plus_1: usize, n_fields: usize, hx: f64, hy: f64, dt: f64) -> Self {
        FieldFile { nx, ny, nt_plus_1, n_fields, hx, hy, dt, data: vec![f64::NAN; nt_plus_1 * n_fields * ny * nx] }
    }

    fn offset(&self, t: usize, field: usize) -> usize {
        (t * self.n_fields + field) * self.nx * self.ny
    }

    /// Full `ny × nx` plane of one field at one time level.
    pub fn plane(&self, t: usize, field: usize) -> &[f64] {
        let o = self.offset(t, field);
        &self.data[o..o + self.nx * self.ny]
    }

    pub fn plane_mut(&mut self, t: usize, field: usize) -> &mut [f64] {
        let o = self.offset(t, field);
        let len = self.nx * self.ny;
        &mut self.data[o..o + len]
    }

    pub fn get(&self, t: usize, field: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(t, field) + y * self.nx + x]
    }

    pub fn matches_grid(&self, grid: &SpatialGrid) -> bool {
        self.nx == grid.nx() && self.ny == grid.ny()
    }

    /// Scatters active-cell values into a plane; inactive cells become NaN.
    pub fn set_active(&mut self, grid: &SpatialGrid, t: usize, field: usize, values: &[f64]) {
        let plane = self.plane_mut(t, field);
        plane.fill(f64::NAN);
        for (c, &cell) in grid.active_cells().iter().enumerate() {
            plane[cell] = values[c];
        }
    }

    /// Gathers active-cell values of one plane.
    pub fn active_values(&self, grid: &SpatialGrid, t: usize, field: usize) -> Vec<f64> {
        let plane = self.plane(t, field);
        grid.active_cells().iter().map(|&cell| plane[cell]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.nx as u32, self.ny as u32, self.nt_plus_1 as u32, self.n_fields as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.hx, self.hy, self.dt] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FieldFileError> {
        if bytes.len() < 4 {
            return Err(FieldFileError::TruncatedHeader);
        }
        if &bytes[..4] != MAGIC {
            return Err(FieldFileError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FieldFileError::TruncatedHeader);
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[24 + 8 * i..32 + 8 * i].try_into().unwrap());
        let version = u32_at(0);
        if version != VERSION {
            return Err(FieldFileError::UnsupportedVersion(version));
        }
        let (nx, ny, nt1, nf) = (u32_at(1) as usize, u32_at(2) as usize, u32_at(3) as usize, u32_at(4) as usize);
        let count = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nt1))
            .and_then(|v| v.checked_mul(nf))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| FieldFileError::Shape("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != count {
            return Err(FieldFileError::LengthMismatch { expected: count, got: payload.len() });
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FieldFile { nx, ny, nt_plus_1: nt1, n_fields: nf, hx: f64_at(0), hy: f64_at(1), dt: f64_at(2), data })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FieldFileError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), FieldFileError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldFileError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldFileError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

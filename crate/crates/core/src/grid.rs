//! Masked 2D cell-centred grid with a Neumann 5-point Laplacian.

use std::collections::VecDeque;
use std::path::Path;

use thiserror::Error;

use crate::field_file::{FieldFile, FieldFileError};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("domain has no active cells")]
    EmptyDomain,
    #[error("domain splits into {0} disconnected components")]
    DisconnectedDomain(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("mask file: {0}")]
    Format(String),
    #[error(transparent)]
    File(#[from] FieldFileError),
}

/// How mask file values are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Inside where the value is ≤ 0.
    SignedDistance,
    /// Inside where the value is nonzero.
    Binary,
}

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    mask: Vec<bool>,
    active: Vec<usize>,
    /// Neighbour lists in CSR form: (active index, stencil weight).
    nbr_start: Vec<usize>,
    nbr: Vec<(usize, f64)>,
    /// Σ of stencil weights per cell (diagonal of −Δ_h).
    weight_sum: Vec<f64>,
}

impl SpatialGrid {
    pub fn rectangle(nx: usize, ny: usize, hx: f64, hy: f64) -> Result<Self, GridError> {
        Self::from_mask(nx, ny, hx, hy, vec![true; nx * ny])
    }

    /// Disk inscribed in the `n × n` square: cells whose centres lie within
    /// radius `n·h/2` of the centre.
    pub fn disk(n: usize, h: f64) -> Result<Self, GridError> {
        let r = 0.5 * n as f64;
        let mask = (0..n * n)
            .map(|cell| {
                let (x, y) = ((cell % n) as f64 + 0.5 - r, (cell / n) as f64 + 0.5 - r);
                x * x + y * y <= r * r
            })
            .collect();
        Self::from_mask(n, n, h, h, mask)
    }

    /// `mask` is row-major (`y * nx + x`).
    pub fn from_mask(nx: usize, ny: usize, hx: f64, hy: f64, mask: Vec<bool>) -> Result<Self, GridError> {
        if nx == 0 || ny == 0 {
            return Err(GridError::Invalid(format!("{nx}×{ny} cells")));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(GridError::Invalid(format!("cell size {hx}×{hy}")));
        }
        if mask.len() != nx * ny {
            return Err(GridError::DimensionMismatch { expected: nx * ny, got: mask.len() });
        }
        let active: Vec<usize> = (0..nx * ny).filter(|&c| mask[c]).collect();
        if active.is_empty() {
            return Err(GridError::EmptyDomain);
        }
        let mut index = vec![usize::MAX; nx * ny];
        for (i, &c) in active.iter().enumerate() {
            index[c] = i;
        }

        let (wx, wy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
        let mut nbr_start = Vec::with_capacity(active.len() + 1);
        let mut nbr = Vec::with_capacity(4 * active.len());
        let mut weight_sum = Vec::with_capacity(active.len());
        for &cell in &active {
            nbr_start.push(nbr.len());
            let (x, y) = (cell % nx, cell / nx);
            let mut sum = 0.0;
            let candidates = [
                (x > 0).then(|| (cell - 1, wx)),
                (x + 1 < nx).then(|| (cell + 1, wx)),
                (y > 0).then(|| (cell - nx, wy)),
                (y + 1 < ny).then(|| (cell + nx, wy)),
            ];
            for (n, w) in candidates.into_iter().flatten() {
                if mask[n] {
                    nbr.push((index[n], w));
                    sum += w;
                }
            }
            weight_sum.push(sum);
        }
        nbr_start.push(nbr.len());

        let grid = SpatialGrid { nx, ny, hx, hy, mask, active, nbr_start, nbr, weight_sum };
        let components = grid.count_components();
        if components > 1 {
            return Err(GridError::DisconnectedDomain(components));
        }
        Ok(grid)
    }

    /// Mask from gridded values (row-major, NaN counts as outside).
    pub fn from_values(nx: usize, ny: usize, hx: f64, hy: f64, values: &[f64], kind: MaskKind) -> Result<Self, GridError> {
        let mask = values
            .iter()
            .map(|&v| match kind {
                MaskKind::SignedDistance => v <= 0.0,
                MaskKind::Binary => !v.is_nan() && v != 0.0,
            })
            .collect();
        Self::from_mask(nx, ny, hx, hy, mask)
    }

    fn count_components(&self) -> usize {
        let n = self.active.len();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(c) = queue.pop_front() {
                for &(nb, _) in self.neighbours(c) {
                    if !seen[nb] {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        components
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Quadrature weight of every active cell.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major cell ids of the active cells, in active-index order.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    /// Column and row of an active cell.
    pub fn position(&self, c: usize) -> (usize, usize) {
        let cell = self.active[c];
        (cell % self.nx, cell / self.nx)
    }

    /// Cell-centre coordinates, origin at the lower-left corner.
    pub fn centre(&self, c: usize) -> (f64, f64) {
        let (x, y) = self.position(c);
        ((x as f64 + 0.5) * self.hx, (y as f64 + 0.5) * self.hy)
    }

    /// Active neighbours with stencil weights 1/h².
    #[inline]
    pub fn neighbours(&self, c: usize) -> &[(usize, f64)] {
        &self.nbr[self.nbr_start[c]..self.nbr_start[c + 1]]
    }

    #[inline]
    pub fn weight_sum(&self, c: usize) -> f64 {
        self.weight_sum[c]
    }

    fn check(&self, len: usize) -> Result<(), GridError> {
        if len == self.n_active() {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch { expected: self.n_active(), got: len })
        }
    }

    /// `out = Δ_h f`. Missing neighbours are mirrored, so they contribute
    /// nothing. Panics on length mismatch.
    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n_active());
        assert_eq!(out.len(), self.n_active());
        for c in 0..f.len() {
            let fc = f[c];
            let mut acc = 0.0;
            for &(nb, w) in self.neighbours(c) {
                acc += w * (f[nb] - fc);
            }
            out[c] = acc;
        }
    }

    pub fn laplacian(&self, f: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check(f.len())?;
        let mut out = vec![0.0; f.len()];
        self.laplacian_into(f, &mut out);
        Ok(out)
    }

    pub fn integrate(&self, f: &[f64]) -> Result<f64, GridError> {
        self.check(f.len())?;
        Ok(f.iter().sum::<f64>() * self.cell_area())
    }

    pub fn inner_product(&self, f: &[f64], g: &[f64]) -> Result<f64, GridError> {
        self.check(f.len())?;
        self.check(g.len())?;
        Ok(dot(f, g) * self.cell_area())
    }

    /// Scatters active values into a full row-major plane, NaN outside.
    pub fn to_plane(&self, f: &[f64]) -> Vec<f64> {
        let mut plane = vec![f64::NAN; self.nx * self.ny];
        for (c, &cell) in self.active.iter().enumerate() {
            plane[cell] = f[c];
        }
        plane
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reads a single-plane field file as a mask.
pub fn load_mask(path: impl AsRef<Path>, kind: MaskKind) -> Result<SpatialGrid, GridError> {
    let file = FieldFile::load(path)?;
    if file.nt_plus_1 != 1 || file.n_fields != 1 {
        return Err(GridError::Format(format!(
            "expected one level and one field, found {} levels and {} fields",
            file.nt_plus_1, file.n_fields
        )));
    }
    SpatialGrid::from_values(file.nx, file.ny, file.hx, file.hy, &file.data, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_has_zero_laplacian() {
        let g = SpatialGrid::disk(20, 0.3).unwrap();
        let lap = g.laplacian(&vec![2.5; g.n_active()]).unwrap();
        assert!(lap.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_stencil() {
        let g = SpatialGrid::rectangle(3, 3, 1.0, 1.0).unwrap();
        let mut f = vec![0.0; 9];
        for c in [1, 3, 5, 7] {
            f[c] = 1.0;
        }
        assert_eq!(g.laplacian(&f).unwrap()[4], 4.0);
    }

    #[test]
    fn anisotropic_weights() {
        let g = SpatialGrid::rectangle(3, 3, 0.5, 2.0).unwrap();
        let mut f = vec![0.0; 9];
        f[3] = 1.0;
        f[1] = 1.0;
        assert_eq!(g.laplacian(&f).unwrap()[4], 4.0 + 0.25);
    }

    #[test]
    fn quadrature() {
        let g = SpatialGrid::rectangle(10, 10, 0.5, 0.5).unwrap();
        assert_eq!(g.integrate(&vec![1.0; 100]).unwrap(), 25.0);
        let mut mask = vec![false; 16];
        for c in [0, 1, 2, 3, 7, 11, 15] {
            mask[c] = true;
        }
        let g = SpatialGrid::from_mask(4, 4, 1.0, 1.0, mask).unwrap();
        assert_eq!(g.n_active(), 7);
        assert_eq!(g.integrate(&vec![2.0; 7]).unwrap(), 14.0);
        assert!(matches!(g.integrate(&[1.0; 6]), Err(GridError::DimensionMismatch { expected: 7, got: 6 })));
    }

    #[test]
    fn mask_errors() {
        assert!(matches!(SpatialGrid::from_mask(2, 2, 1.0, 1.0, vec![false; 4]), Err(GridError::EmptyDomain)));
        let blobs = vec![true, false, false, true];
        assert!(matches!(SpatialGrid::from_mask(2, 2, 1.0, 1.0, blobs), Err(GridError::DisconnectedDomain(2))));
        let g = SpatialGrid::from_values(3, 2, 1.0, 1.0, &[-1.0; 6], MaskKind::SignedDistance).unwrap();
        assert_eq!(g.n_active(), 6);
        let g = SpatialGrid::from_values(2, 1, 1.0, 1.0, &[f64::NAN, 3.0], MaskKind::Binary).unwrap();
        assert_eq!(g.n_active(), 1);
    }

    #[test]
    fn disk_area_close_to_analytic() {
        let r = 1.0;
        let g = SpatialGrid::disk(64, 2.0 * r / 64.0).unwrap();
        let area = g.n_active() as f64 * g.cell_area();
        let exact = std::f64::consts::PI * r * r;
        assert!((area - exact).abs() / exact < 0.05, "{area} vs {exact}");
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("rdident-mask-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.rdrd");
        let mut f = FieldFile::new(4, 3, 1, 1, 0.5, 0.5, 0.0);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = if i % 4 == 3 { 1.0 } else { -0.2 };
        }
        f.save(&path).unwrap();
        let g = load_mask(&path, MaskKind::SignedDistance).unwrap();
        assert_eq!(g.n_active(), 9);
        let g = load_mask(&path, MaskKind::Binary).unwrap();
        assert_eq!(g.n_active(), 12);
        std::fs::remove_dir_all(dir).unwrap();
    }

    /// Random connected mask grown from the centre.
    fn random_mask(seed: u64, n: usize) -> SpatialGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = vec![false; n * n];
        let mut frontier = vec![(n / 2, n / 2)];
        mask[(n / 2) * n + n / 2] = true;
        let target = rng.gen_range(1..n * n);
        let mut count = 1;
        while count < target && !frontier.is_empty() {
            let i = rng.gen_range(0..frontier.len());
            let (x, y) = frontier[i];
            let (dx, dy) = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)][rng.gen_range(0..4)];
            let (xn, yn) = (x as i64 + dx, y as i64 + dy);
            if xn < 0 || yn < 0 || xn >= n as i64 || yn >= n as i64 {
                continue;
            }
            let cell = yn as usize * n + xn as usize;
            if !mask[cell] {
                mask[cell] = true;
                count += 1;
                frontier.push((xn as usize, yn as usize));
            }
        }
        SpatialGrid::from_mask(n, n, 0.7, 1.3, mask).unwrap()
    }

    proptest! {
        #[test]
        fn laplacian_conserves_and_is_symmetric(seed in any::<u64>(), n in 2usize..12) {
            let g = random_mask(seed, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let f: Vec<f64> = (0..g.n_active()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..g.n_active()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lf = g.laplacian(&f).unwrap();
            let lh = g.laplacian(&h).unwrap();
            let scale: f64 = lf.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
            prop_assert!(lf.iter().sum::<f64>().abs() <= 1e-12 * scale);
            let a = g.inner_product(&f, &lh).unwrap();
            let b = g.inner_product(&lf, &h).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }

        #[test]
        fn single_maximum_has_nonpositive_laplacian(seed in any::<u64>(), n in 2usize..10) {
            let g = random_mask(seed, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f: Vec<f64> = (0..g.n_active()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let peak = rng.gen_range(0..g.n_active());
            f[peak] = 2.0;
            prop_assert!(g.laplacian(&f).unwrap()[peak] <= 0.0);
        }
    }
}

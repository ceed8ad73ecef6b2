//! Jacobi-preconditioned conjugate gradients for the per-species implicit
//! systems `(diag(shift) − coef·Δ_h) x = b`.

use thiserror::Error;

use crate::grid::{dot, SpatialGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("CG did not reach relative residual {tol:e} in {iterations} iterations (last {residual:e})")]
    NotConverged { iterations: usize, residual: f64, tol: f64 },
    #[error("non-finite value in linear solve")]
    NonFinite,
}

/// `A x = shift ∘ x − coef · Δ_h x` with `shift > 0`, `coef ≥ 0`: symmetric
/// positive definite and an M-matrix.
pub struct HelmholtzOperator<'a> {
    pub grid: &'a SpatialGrid,
    pub shift: &'a [f64],
    pub coef: f64,
}

impl HelmholtzOperator<'_> {
    #[inline]
    pub fn diagonal(&self, c: usize) -> f64 {
        self.shift[c] + self.coef * self.grid.weight_sum(c)
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let coef = self.coef;
        for c in 0..x.len() {
            let xc = x[c];
            let mut acc = 0.0;
            for &(nb, w) in self.grid.neighbours(c) {
                acc += w * (xc - x[nb]);
            }
            out[c] = self.shift[c] * xc + coef * acc;
        }
    }

    /// One forward Gauss–Seidel sweep.
    pub fn gauss_seidel(&self, b: &[f64], x: &mut [f64]) {
        for c in 0..x.len() {
            let mut off = 0.0;
            for &(nb, w) in self.grid.neighbours(c) {
                off += w * x[nb];
            }
            x[c] = (b[c] + self.coef * off) / self.diagonal(c);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    /// Stop when ‖b − Ax‖₂ ≤ rel_tol · ‖b‖₂.
    pub rel_tol: f64,
    /// Defaults to 10 × the number of unknowns.
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings { rel_tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Achieved relative residual.
    pub residual: f64,
}

/// Scratch vectors reused across solves.
#[derive(Debug, Clone, Default)]
pub struct CgWorkspace {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl CgWorkspace {
    pub fn new(n: usize) -> Self {
        CgWorkspace { r: vec![0.0; n], z: vec![0.0; n], p: vec![0.0; n], ap: vec![0.0; n], inv_diag: vec![0.0; n] }
    }

    fn resize(&mut self, n: usize) {
        for v in [&mut self.r, &mut self.z, &mut self.p, &mut self.ap, &mut self.inv_diag] {
            v.resize(n, 0.0);
        }
    }
}

/// Solves `A x = b`, using `x` as the starting guess.
pub fn solve_cg(
    op: &HelmholtzOperator,
    b: &[f64],
    x: &mut [f64],
    settings: &CgSettings,
    ws: &mut CgWorkspace,
) -> Result<CgReport, LinearSolveError> {
    let n = b.len();
    ws.resize(n);
    let bnorm = dot(b, b).sqrt();
    if !bnorm.is_finite() {
        return Err(LinearSolveError::NonFinite);
    }
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport { iterations: 0, residual: 0.0 });
    }
    let max_iter = settings.max_iter.unwrap_or(10 * n.max(1));
    let target = settings.rel_tol * bnorm;

    let CgWorkspace { r, z, p, ap, inv_diag } = ws;
    for c in 0..n {
        inv_diag[c] = 1.0 / op.diagonal(c);
    }
    op.apply(x, ap);
    for c in 0..n {
        r[c] = b[c] - ap[c];
        z[c] = inv_diag[c] * r[c];
        p[c] = z[c];
    }
    let mut rnorm = dot(r, r).sqrt();
    let mut rz = dot(r, z);
    let mut it = 0;
    while rnorm > target {
        if it == max_iter {
            return Err(LinearSolveError::NotConverged { iterations: it, residual: rnorm / bnorm, tol: settings.rel_tol });
        }
        op.apply(p, ap);
        let alpha = rz / dot(p, ap);
        for c in 0..n {
            x[c] += alpha * p[c];
            r[c] -= alpha * ap[c];
            z[c] = inv_diag[c] * r[c];
        }
        let rz_new = dot(r, z);
        let beta = rz_new / rz;
        rz = rz_new;
        for c in 0..n {
            p[c] = z[c] + beta * p[c];
        }
        rnorm = dot(r, r).sqrt();
        if !rnorm.is_finite() {
            return Err(LinearSolveError::NonFinite);
        }
        it += 1;
    }
    Ok(CgReport { iterations: it, residual: rnorm / bnorm })
}

/// For `b ≥ 0`: clamps negative roundoff in `x` and runs one Gauss–Seidel
/// sweep, which cannot produce a negative value from nonnegative inputs.
/// Returns the most negative value seen before the fix (0 if none).
pub fn enforce_nonnegative(op: &HelmholtzOperator, b: &[f64], x: &mut [f64]) -> f64 {
    let worst = x.iter().copied().fold(0.0, f64::min);
    if worst < 0.0 {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        op.gauss_seidel(b, x);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(op: &HelmholtzOperator) -> DMatrix<f64> {
        let n = op.shift.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    #[test]
    fn identity_system_returns_rhs() {
        let g = SpatialGrid::rectangle(5, 4, 1.0, 1.0).unwrap();
        let shift = vec![1.0; 20];
        let op = HelmholtzOperator { grid: &g, shift: &shift, coef: 0.0 };
        let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut x = vec![0.0; 20];
        solve_cg(&op, &b, &mut x, &CgSettings::default(), &mut CgWorkspace::default()).unwrap();
        for (a, e) in x.iter().zip(&b) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_solve_on_8x8() {
        let g = SpatialGrid::rectangle(8, 8, 0.25, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shift: Vec<f64> = (0..64).map(|_| rng.gen_range(1.0..2.0)).collect();
        let op = HelmholtzOperator { grid: &g, shift: &shift, coef: 0.3 };
        let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = dense(&op);
        assert!((m.clone() - m.transpose()).abs().max() < 1e-14);
        let want = m.lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let mut x = vec![0.0; 64];
        let settings = CgSettings::default();
        let rep = solve_cg(&op, &b, &mut x, &settings, &mut CgWorkspace::new(64)).unwrap();
        assert!(rep.residual <= settings.rel_tol);
        let diff = x.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-9, "{diff}");
    }

    #[test]
    fn iteration_cap_reported() {
        let g = SpatialGrid::rectangle(16, 16, 0.1, 0.1).unwrap();
        let shift = vec![1.0; 256];
        let op = HelmholtzOperator { grid: &g, shift: &shift, coef: 10.0 };
        let b: Vec<f64> = (0..256).map(|i| (i % 7) as f64).collect();
        let mut x = vec![0.0; 256];
        let err = solve_cg(&op, &b, &mut x, &CgSettings { rel_tol: 1e-12, max_iter: Some(2) }, &mut CgWorkspace::default());
        assert!(matches!(err, Err(LinearSolveError::NotConverged { iterations: 2, .. })));
    }

    #[test]
    fn nonnegativity_fix_keeps_signs() {
        let g = SpatialGrid::rectangle(6, 6, 0.2, 0.2).unwrap();
        let shift = vec![1.0; 36];
        let op = HelmholtzOperator { grid: &g, shift: &shift, coef: 0.05 };
        let mut b = vec![0.0; 36];
        b[0] = 1.0;
        let mut x = vec![0.0; 36];
        solve_cg(&op, &b, &mut x, &CgSettings { rel_tol: 1e-3, max_iter: None }, &mut CgWorkspace::default()).unwrap();
        x[20] = -1e-9;
        enforce_nonnegative(&op, &b, &mut x);
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}

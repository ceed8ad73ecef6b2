//! Backward sweep for the adjoint ζ (ζ at the final level is zero).
//!
//! The default coupling is the exact adjoint of the backward-Euler forward
//! step, so gradients agree with finite differences of the discrete cost up
//! to solver tolerances:
//!
//! ```text
//! (I − dt·D·Δ_h − dt·J_r(u^{n+1})ᵀ) ζ_n = ζ_{n+1} − dt·Fᵀ(F u^{n+1} − c^{n+1})
//! ```
//!
//! solved by transposed fixed-point sweeps with the loss part `Q` implicit.
//! The explicit coupling moves `J_rᵀ ζ_{n+1}` to the right side instead and
//! only agrees with the discrete gradient to first order.

use thiserror::Error;

use crate::forward::{ForwardError, TrajectorySource};
use crate::gradient::GradientSet;
use crate::grid::SpatialGrid;
use crate::linalg::{solve_cg, CgSettings, CgWorkspace, HelmholtzOperator, LinearSolveError};
use crate::network::Kinetics;
use crate::problem::{IdentificationProblem, LevelStack, ParameterSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error("adjoint linear solve failed at level {level}, species {species}: {source}")]
    LinearSolve { level: usize, species: usize, source: LinearSolveError },
    #[error("adjoint sweeps did not settle at level {level} after {iterations} sweeps (change {change:e})")]
    NotConverged { level: usize, iterations: usize, change: f64 },
    #[error("non-finite adjoint at level {level}")]
    NonFiniteAdjoint { level: usize },
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointCoupling {
    /// Discrete adjoint of the forward step.
    Exact,
    /// Reaction coupling lagged to the later level.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointSettings {
    pub coupling: AdjointCoupling,
    pub cg: CgSettings,
    /// Relative change at which sweeps stop.
    pub picard_tol: f64,
    pub max_picard: usize,
}

impl Default for AdjointSettings {
    fn default() -> Self {
        AdjointSettings {
            coupling: AdjointCoupling::Exact,
            cg: CgSettings { rel_tol: 1e-12, max_iter: None },
            picard_tol: 1e-11,
            max_picard: 500,
        }
    }
}

pub type AdjointTrajectory = LevelStack;

struct AdjointStepper<'a> {
    kinetics: &'a Kinetics,
    grid: &'a SpatialGrid,
    settings: AdjointSettings,
    n: usize,
    nc: usize,
    cell_u: Vec<f64>,
    cell_ext: Vec<f64>,
    cell_z: Vec<f64>,
    cell_out: Vec<f64>,
    cell_p: Vec<f64>,
    cell_q: Vec<f64>,
    q: Vec<f64>,
    coupling: Vec<f64>,
    next: Vec<f64>,
    shift: Vec<f64>,
    rhs: Vec<f64>,
    ws: CgWorkspace,
}

impl<'a> AdjointStepper<'a> {
    fn new(kinetics: &'a Kinetics, grid: &'a SpatialGrid, settings: AdjointSettings) -> Self {
        let (n, nc) = (kinetics.n_species(), grid.n_active());
        AdjointStepper {
            kinetics,
            grid,
            settings,
            n,
            nc,
            cell_u: vec![0.0; n],
            cell_ext: vec![0.0; kinetics.n_externals()],
            cell_z: vec![0.0; n],
            cell_out: vec![0.0; n],
            cell_p: vec![0.0; n],
            cell_q: vec![0.0; n],
            q: vec![0.0; n * nc],
            coupling: vec![0.0; n * nc],
            next: vec![0.0; n * nc],
            shift: vec![0.0; nc],
            rhs: vec![0.0; nc],
            ws: CgWorkspace::new(nc),
        }
    }

    fn gather(&mut self, u: &[f64], ext: &[f64], z: &[f64], c: usize) {
        let nc = self.nc;
        for i in 0..self.n {
            self.cell_u[i] = u[i * nc + c];
            self.cell_z[i] = z[i * nc + c];
        }
        for (e, v) in self.cell_ext.iter_mut().enumerate() {
            *v = ext[e * nc + c];
        }
    }

    /// `coupling = J_rᵀ ζ (+ q∘ζ when `with_q`)` at every cell; refreshes `q`.
    fn coupling_term(&mut self, u: &[f64], k: &[f64], ext: &[f64], z: &[f64], with_q: bool) {
        let (n, nc) = (self.n, self.nc);
        for c in 0..nc {
            self.gather(u, ext, z, c);
            self.cell_out.fill(0.0);
            self.kinetics.jacobian_u_transpose_add(&self.cell_u, k, &self.cell_ext, &self.cell_z, &mut self.cell_out);
            if with_q {
                self.kinetics.split_into(&self.cell_u, k, &self.cell_ext, &mut self.cell_p, &mut self.cell_q);
            }
            for i in 0..n {
                let mut v = self.cell_out[i];
                if with_q {
                    self.q[i * nc + c] = self.cell_q[i];
                    v += self.cell_q[i] * self.cell_z[i];
                }
                self.coupling[i * nc + c] = v;
            }
        }
    }

    /// ζ_n from ζ_{n+1}; `source` is Fᵀ(F u^{n+1} − c^{n+1}).
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        z_next: &[f64],
        u_next: &[f64],
        source: &[f64],
        k: &[f64],
        d: &[f64],
        dt: f64,
        ext: &[f64],
        out: &mut [f64],
        level: usize,
    ) -> Result<(), AdjointError> {
        let (n, nc) = (self.n, self.nc);
        match self.settings.coupling {
            AdjointCoupling::Explicit => {
                self.coupling_term(u_next, k, ext, z_next, false);
                out.copy_from_slice(z_next);
                self.shift.fill(1.0);
                for i in 0..n {
                    for c in 0..nc {
                        let j = i * nc + c;
                        self.rhs[c] = z_next[j] + dt * self.coupling[j] - dt * source[j];
                    }
                    let op = HelmholtzOperator { grid: self.grid, shift: &self.shift, coef: dt * d[i] };
                    solve_cg(&op, &self.rhs, &mut out[i * nc..(i + 1) * nc], &self.settings.cg, &mut self.ws)
                        .map_err(|source| AdjointError::LinearSolve { level, species: i, source })?;
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(AdjointError::NonFiniteAdjoint { level });
                }
                Ok(())
            }
            AdjointCoupling::Exact => {
                out.copy_from_slice(z_next);
                let mut cg = self.settings.cg;
                cg.rel_tol = cg.rel_tol.max(1e-6);
                for sweep in 1..=self.settings.max_picard {
                    self.coupling_term(u_next, k, ext, out, true);
                    self.next.copy_from_slice(out);
                    for i in 0..n {
                        for c in 0..nc {
                            let j = i * nc + c;
                            self.shift[c] = 1.0 + dt * self.q[j];
                            self.rhs[c] = z_next[j] - dt * source[j] + dt * self.coupling[j];
                        }
                        let op = HelmholtzOperator { grid: self.grid, shift: &self.shift, coef: dt * d[i] };
                        solve_cg(&op, &self.rhs, &mut self.next[i * nc..(i + 1) * nc], &cg, &mut self.ws)
                            .map_err(|source| AdjointError::LinearSolve { level, species: i, source })?;
                    }
                    let mut change: f64 = 0.0;
                    let mut scale: f64 = 0.0;
                    for (a, b) in self.next.iter().zip(out.iter()) {
                        change = change.max((a - b).abs());
                        scale = scale.max(a.abs());
                    }
                    out.copy_from_slice(&self.next);
                    if !change.is_finite() || !scale.is_finite() {
                        return Err(AdjointError::NonFiniteAdjoint { level });
                    }
                    // as in the forward step: finish only on a sweep at the configured inner tolerance
                    let settled = change <= self.settings.picard_tol * scale;
                    if settled && cg.rel_tol <= self.settings.cg.rel_tol {
                        return Ok(());
                    }
                    cg.rel_tol = if settled {
                        self.settings.cg.rel_tol
                    } else {
                        self.settings.cg.rel_tol.max((1e-2 * change / scale).min(1e-6))
                    };
                    if sweep == self.settings.max_picard {
                        return Err(AdjointError::NotConverged { level, iterations: sweep, change });
                    }
                }
                unreachable!("max_picard ≥ 1")
            }
        }
    }
}

/// Result of one backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointOutput {
    /// All levels of ζ, when requested.
    pub trajectory: Option<AdjointTrajectory>,
    pub gradient: GradientSet,
    /// max |ζ| over all levels.
    pub max_abs: f64,
}

/// Runs the backward sweep and accumulates the gradient quadratures on the
/// fly, each anchored at level n+1:
/// `∇_d J_i = −dt Σ_n ⟨ζ_n,i, Δ_h u_i^{n+1}⟩`,
/// `∇_k J = −dt Σ_n ⟨ζ_n, ∂r/∂k(u^{n+1})⟩`, `∇_I J = −ζ_0` on unknowns.
pub fn adjoint_sweep(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    source: &mut dyn TrajectorySource,
    settings: &AdjointSettings,
    keep_trajectory: bool,
) -> Result<AdjointOutput, AdjointError> {
    let (n, nc, nt, dt) = (problem.network.n_species(), problem.n_cells(), problem.time.nt(), problem.time.dt());
    let grid = &problem.grid;
    let area = grid.cell_area();
    let mut stepper = AdjointStepper::new(&problem.kinetics, grid, *settings);
    let mut levels: Vec<Vec<f64>> = if keep_trajectory { vec![Vec::new(); nt + 1] } else { Vec::new() };

    let mut z_next = vec![0.0; n * nc];
    let mut z = vec![0.0; n * nc];
    let mut residual = vec![0.0; n * nc];
    let mut lap = vec![0.0; nc];
    let mut g_d = vec![0.0; n];
    let mut g_k = vec![0.0; problem.network.n_rates()];
    let mut cell_u = vec![0.0; n];
    let mut cell_z = vec![0.0; n];
    let mut cell_ext = vec![0.0; problem.network.n_externals()];
    let mut max_abs: f64 = 0.0;

    for level in (0..nt).rev() {
        let u_next = source.level(level + 1)?;
        let ext = problem.external_at(level + 1);
        problem.observation.residual_into(u_next, problem.data.level(level + 1), nc, &mut residual);
        stepper.step(&z_next, u_next, &residual, &theta.k, &theta.d, dt, ext, &mut z, level)?;

        for i in 0..n {
            let ui = &u_next[i * nc..(i + 1) * nc];
            grid.laplacian_into(ui, &mut lap);
            let zi = &z[i * nc..(i + 1) * nc];
            g_d[i] -= dt * area * crate::grid::dot(zi, &lap);
        }
        for c in 0..nc {
            for i in 0..n {
                cell_u[i] = u_next[i * nc + c];
                cell_z[i] = z[i * nc + c];
            }
            for (e, v) in cell_ext.iter_mut().enumerate() {
                *v = ext[e * nc + c];
            }
            problem.kinetics.jacobian_k_transpose_add(&cell_u, &cell_ext, &cell_z, -dt * area, &mut g_k);
        }

        max_abs = z.iter().fold(max_abs, |m, v| m.max(v.abs()));
        if keep_trajectory {
            levels[level] = z.clone();
        }
        std::mem::swap(&mut z, &mut z_next);
    }
    // z_next now holds ζ_0
    if keep_trajectory {
        levels[nt] = vec![0.0; n * nc];
    }
    let unknown = problem.observation.unknown();
    let mut g_i = Vec::with_capacity(unknown.len() * nc);
    for &i in unknown {
        g_i.extend(z_next[i * nc..(i + 1) * nc].iter().map(|v| -v));
    }
    let trajectory = keep_trajectory.then(|| LevelStack::new(n, nc, levels).expect("sized by construction"));
    Ok(AdjointOutput { trajectory, gradient: GradientSet { d: g_d, k: g_k, initial: g_i }, max_abs })
}

/// Adjoint trajectory for a stored forward trajectory.
pub fn solve_adjoint(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    u: &LevelStack,
    settings: &AdjointSettings,
) -> Result<AdjointTrajectory, AdjointError> {
    let mut src = u;
    let out = adjoint_sweep(problem, theta, &mut src, settings, true)?;
    Ok(out.trajectory.expect("trajectory requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use crate::network::{ReactionDecl, ReactionNetwork, SpeciesDecl};
    use crate::problem::{fixtures, Bound, Bounds, ObservationOperator, TimeAxis};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn exact_data_gives_zero_adjoint() {
        let (problem, theta) = fixtures::driven_problem(6, 8);
        let u = solve_forward(&problem, &theta).unwrap();
        let z = solve_adjoint(&problem, &theta, &u, &AdjointSettings::default()).unwrap();
        assert!(z.levels().iter().flatten().all(|&v| v == 0.0));
    }

    /// A ⇌ B in one cell, B observed: linear, so the discrete adjoint can be
    /// written down with dense matrices.
    #[test]
    fn single_cell_linear_network_matches_dense_recurrence() {
        let net = ReactionNetwork::new(
            vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("B", &["A"]).observed()],
            vec![ReactionDecl::new(&["A"], &["B"], "k1"), ReactionDecl::new(&["B"], &["A"], "k2").backward()],
        )
        .unwrap();
        let (k1, k2, nt) = (1.5, 0.4, 6);
        let grid = SpatialGrid::rectangle(1, 1, 1.0, 1.0).unwrap();
        let time = TimeAxis::new(1.2, nt).unwrap();
        let dt = time.dt();
        let obs = ObservationOperator::from_network(&net).unwrap();
        let c: Vec<Vec<f64>> = (0..=nt).map(|n| vec![0.2 + 0.05 * n as f64]).collect();
        let data = LevelStack::new(1, 1, c.clone()).unwrap();
        let problem =
            IdentificationProblem::new(net, grid, time, obs, data, LevelStack::zeros(0, 1, nt + 1)).unwrap();
        let theta = ParameterSet {
            d: vec![0.5, 0.5],
            k: vec![k1, k2],
            initial: vec![0.9],
            bounds: Bounds { d: vec![Bound::new(0.1, 1.0); 2], k: vec![Bound::new(1e-7, 10.0); 2], initial: vec![Bound::new(1e-4, 1.0)] },
        };
        let u = solve_forward(&problem, &theta).unwrap();
        let z = solve_adjoint(&problem, &theta, &u, &AdjointSettings::default()).unwrap();

        let jac = DMatrix::from_row_slice(2, 2, &[-k1, k2, k1, -k2]);
        let step = DMatrix::identity(2, 2) - jac * dt;
        let mut states = vec![DVector::from_vec(vec![0.9, c[0][0]])];
        for n in 0..nt {
            states.push(step.clone().lu().solve(&states[n]).unwrap());
        }
        for n in 0..=nt {
            assert!((states[n][1] - u.level(n)[1]).abs() < 1e-12);
        }
        let step_t = step.transpose();
        let mut zeta = DVector::zeros(2);
        for n in (0..nt).rev() {
            let mut rhs = zeta.clone();
            rhs[1] -= dt * (states[n + 1][1] - c[n + 1][0]);
            zeta = step_t.clone().lu().solve(&rhs).unwrap();
            for i in 0..2 {
                assert!((zeta[i] - z.level(n)[i]).abs() < 1e-12, "level {n} species {i}");
            }
        }
    }

    #[test]
    fn adjoint_is_linear_in_the_residual() {
        // Scaling data around the state scales ζ: ζ(u − s·(u − c)) = s·ζ(c)
        let (mut problem, truth) = fixtures::driven_problem(5, 6);
        let theta = fixtures::perturbed(&truth);
        let u = solve_forward(&problem, &theta).unwrap();
        let settings = AdjointSettings::default();
        let z1 = solve_adjoint(&problem, &theta, &u, &settings).unwrap();
        let nc = problem.n_cells();
        let scaled: Vec<Vec<f64>> = (0..u.n_levels())
            .map(|n| {
                let fu = problem.observation.observe(u.level(n), nc);
                fu.iter().zip(problem.data.level(n)).map(|(a, c)| a - 2.5 * (a - c)).collect()
            })
            .collect();
        problem.data = LevelStack::new(1, nc, scaled).unwrap();
        let z2 = solve_adjoint(&problem, &theta, &u, &settings).unwrap();
        let scale = z1.levels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in z1.levels().iter().flatten().zip(z2.levels().iter().flatten()) {
            assert!((2.5 * a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn explicit_coupling_stays_close_for_small_steps() {
        let (problem, truth) = fixtures::driven_problem(5, 40);
        let theta = fixtures::perturbed(&truth);
        let u = solve_forward(&problem, &theta).unwrap();
        let exact = solve_adjoint(&problem, &theta, &u, &AdjointSettings::default()).unwrap();
        let lagged = AdjointSettings { coupling: AdjointCoupling::Explicit, ..Default::default() };
        let approx = solve_adjoint(&problem, &theta, &u, &lagged).unwrap();
        let scale = exact.levels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = exact
            .levels()
            .iter()
            .flatten()
            .zip(approx.levels().iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(scale > 0.0 && diff < 0.1 * scale, "{diff} vs {scale}");
    }
}

//! Implicit, nonnegativity-preserving time stepping.
//!
//! Each reaction function splits as `r_i = p_i − u_i·q_i` with p, q ≥ 0.
//! One sweep solves, species by species,
//!
//! ```text
//! (1 + dt·q_i(u^s) − dt·d_i·Δ_h) u_i^{s+1} = u_i^n + dt·p_i(u^s)
//! ```
//!
//! starting from `u^s = u^n`. Every sweep is an M-matrix solve with a
//! nonnegative right side. Sweeps are repeated until the iterate stops
//! moving, so the step lands on backward Euler, which conserves every
//! moiety exactly. `max_picard = 1` gives the single linearly implicit sweep.

use std::collections::VecDeque;

use log::warn;
use thiserror::Error;

use crate::grid::SpatialGrid;
use crate::linalg::{enforce_nonnegative, solve_cg, CgSettings, CgWorkspace, HelmholtzOperator, LinearSolveError};
use crate::network::Kinetics;
use crate::problem::{IdentificationProblem, LevelStack, ParameterSet, ProblemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("linear solve failed at step {step}, species {species}: {source}")]
    LinearSolve { step: usize, species: usize, source: LinearSolveError },
    #[error("fixed-point sweeps did not settle at step {step} after {iterations} sweeps (change {change:e})")]
    PicardNotConverged { step: usize, iterations: usize, change: f64 },
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid initial state: {0}")]
    InvalidInitial(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardSettings {
    pub cg: CgSettings,
    /// Sweeps stop when max|u^{s+1} − u^s| ≤ tol·(1 + max|u^{s+1}|).
    pub picard_tol: f64,
    pub max_picard: usize,
}

impl Default for ForwardSettings {
    fn default() -> Self {
        ForwardSettings { cg: CgSettings { rel_tol: 1e-12, max_iter: None }, picard_tol: 1e-12, max_picard: 500 }
    }
}

/// The discrete state u (or any per-species stack) at all levels.
pub type StateTrajectory = LevelStack;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub sweeps: usize,
    pub cg_iterations: usize,
    /// Most negative CG value repaired by the nonnegativity fix.
    pub worst_negative: f64,
}

/// Reusable buffers for stepping one network on one grid.
pub struct Stepper<'a> {
    kinetics: &'a Kinetics,
    grid: &'a SpatialGrid,
    settings: ForwardSettings,
    n: usize,
    nc: usize,
    cell_u: Vec<f64>,
    cell_ext: Vec<f64>,
    cell_p: Vec<f64>,
    cell_q: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    next: Vec<f64>,
    shift: Vec<f64>,
    rhs: Vec<f64>,
    ws: CgWorkspace,
    warned: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(kinetics: &'a Kinetics, grid: &'a SpatialGrid, settings: ForwardSettings) -> Self {
        let (n, nc) = (kinetics.n_species(), grid.n_active());
        Stepper {
            kinetics,
            grid,
            settings,
            n,
            nc,
            cell_u: vec![0.0; n],
            cell_ext: vec![0.0; kinetics.n_externals()],
            cell_p: vec![0.0; n],
            cell_q: vec![0.0; n],
            p: vec![0.0; n * nc],
            q: vec![0.0; n * nc],
            next: vec![0.0; n * nc],
            shift: vec![0.0; nc],
            rhs: vec![0.0; nc],
            ws: CgWorkspace::new(nc),
            warned: false,
        }
    }

    /// p and q at every cell for the state `u` (`N × nc`).
    fn split(&mut self, u: &[f64], k: &[f64], ext: &[f64]) {
        let (n, nc) = (self.n, self.nc);
        for c in 0..nc {
            for i in 0..n {
                self.cell_u[i] = u[i * nc + c];
            }
            for (e, v) in self.cell_ext.iter_mut().enumerate() {
                *v = ext[e * nc + c];
            }
            self.kinetics.split_into(&self.cell_u, k, &self.cell_ext, &mut self.cell_p, &mut self.cell_q);
            for i in 0..n {
                self.p[i * nc + c] = self.cell_p[i];
                self.q[i * nc + c] = self.cell_q[i];
            }
        }
    }

    /// Advances `u_n` by `dt` into `out`. `ext` holds the external fields
    /// for this step (`n_ext × nc`). `step` only labels errors.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        u_n: &[f64],
        k: &[f64],
        d: &[f64],
        dt: f64,
        ext: &[f64],
        out: &mut [f64],
        step: usize,
    ) -> Result<StepReport, ForwardError> {
        let (n, nc) = (self.n, self.nc);
        let mut report = StepReport::default();
        out.copy_from_slice(u_n);
        // inner solves only need to be a little tighter than the current sweep change
        let mut cg = self.settings.cg;
        if self.settings.max_picard > 1 {
            cg.rel_tol = cg.rel_tol.max(1e-6);
        }
        for sweep in 1..=self.settings.max_picard {
            self.split(out, k, ext);
            if !self.warned {
                let qmax = self.q.iter().copied().fold(0.0, f64::max);
                if dt * qmax > 10.0 {
                    warn!("dt·max q = {:.3e} exceeds 10; the step is stable but may be inaccurate", dt * qmax);
                    self.warned = true;
                }
            }
            self.next.copy_from_slice(out);
            for i in 0..n {
                let range = i * nc..(i + 1) * nc;
                for c in 0..nc {
                    self.shift[c] = 1.0 + dt * self.q[i * nc + c];
                    self.rhs[c] = u_n[i * nc + c] + dt * self.p[i * nc + c];
                }
                let op = HelmholtzOperator { grid: self.grid, shift: &self.shift, coef: dt * d[i] };
                let x = &mut self.next[range];
                let rep = solve_cg(&op, &self.rhs, x, &cg, &mut self.ws)
                    .map_err(|source| ForwardError::LinearSolve { step, species: i, source })?;
                report.cg_iterations += rep.iterations;
                report.worst_negative = report.worst_negative.min(enforce_nonnegative(&op, &self.rhs, x));
            }
            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for (a, b) in self.next.iter().zip(out.iter()) {
                change = change.max((a - b).abs());
                scale = scale.max(a.abs());
            }
            out.copy_from_slice(&self.next);
            if !change.is_finite() || !scale.is_finite() {
                return Err(ForwardError::NonFiniteState { step });
            }
            report.sweeps = sweep;
            // a loose inner solve can stall at its warm start and fake a zero change,
            // so only a sweep at the configured inner tolerance may finish
            let settled = change <= self.settings.picard_tol * (1.0 + scale);
            if self.settings.max_picard == 1 || (settled && cg.rel_tol <= self.settings.cg.rel_tol) {
                return Ok(report);
            }
            cg.rel_tol = if settled {
                self.settings.cg.rel_tol
            } else {
                self.settings.cg.rel_tol.max((1e-2 * change / (1.0 + scale)).min(1e-6))
            };
            if sweep == self.settings.max_picard {
                return Err(ForwardError::PicardNotConverged { step, iterations: sweep, change });
            }
        }
        unreachable!("max_picard ≥ 1")
    }
}

fn checked_initial(problem: &IdentificationProblem, theta: &ParameterSet) -> Result<Vec<f64>, ForwardError> {
    problem.check_parameters(theta)?;
    let u0 = problem.initial_state(theta);
    if let Some(v) = u0.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(ForwardError::InvalidInitial(format!("value {v}")));
    }
    if u0.iter().any(|&v| v == 0.0) {
        warn!("initial state has zero entries; accepted although strict positivity is expected");
    }
    Ok(u0)
}

/// u⁰ = G(I), then nt steps; all levels kept.
pub fn solve_forward(problem: &IdentificationProblem, theta: &ParameterSet) -> Result<StateTrajectory, ForwardError> {
    let u0 = checked_initial(problem, theta)?;
    let (n, nc, nt, dt) = (problem.network.n_species(), problem.n_cells(), problem.time.nt(), problem.time.dt());
    let mut stepper = Stepper::new(&problem.kinetics, &problem.grid, problem.forward);
    let mut levels = Vec::with_capacity(nt + 1);
    levels.push(u0);
    for step in 0..nt {
        let mut next = vec![0.0; n * nc];
        stepper.step(&levels[step], &theta.k, &theta.d, dt, problem.external_at(step + 1), &mut next, step)?;
        levels.push(next);
    }
    Ok(LevelStack::new(n, nc, levels).expect("levels sized by construction"))
}

/// Random access to forward levels, either stored or recomputed.
pub trait TrajectorySource {
    fn n_levels(&self) -> usize;
    fn level(&mut self, n: usize) -> Result<&[f64], ForwardError>;
}

impl TrajectorySource for &LevelStack {
    fn n_levels(&self) -> usize {
        LevelStack::n_levels(self)
    }

    fn level(&mut self, n: usize) -> Result<&[f64], ForwardError> {
        Ok(LevelStack::level(self, n))
    }
}

/// Keeps every `stride`-th level; the levels in between are recomputed on
/// demand one segment at a time, holding at most two segments.
pub struct CheckpointedTrajectory<'a> {
    problem: &'a IdentificationProblem,
    theta: &'a ParameterSet,
    stride: usize,
    checkpoints: Vec<Vec<f64>>,
    cache: VecDeque<(usize, Vec<Vec<f64>>)>,
    stepper: Stepper<'a>,
    /// Steps recomputed so far.
    pub recomputed: usize,
}

impl<'a> CheckpointedTrajectory<'a> {
    /// Runs the forward sweep storing checkpoints only. `visit` sees every
    /// level once, in order.
    pub fn solve(
        problem: &'a IdentificationProblem,
        theta: &'a ParameterSet,
        stride: usize,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<Self, ForwardError> {
        let stride = stride.max(1);
        let u0 = checked_initial(problem, theta)?;
        let (nt, dt) = (problem.time.nt(), problem.time.dt());
        let mut stepper = Stepper::new(&problem.kinetics, &problem.grid, problem.forward);
        let mut checkpoints = vec![u0.clone()];
        visit(0, &u0);
        let mut cur = u0;
        let mut next = vec![0.0; cur.len()];
        for step in 0..nt {
            stepper.step(&cur, &theta.k, &theta.d, dt, problem.external_at(step + 1), &mut next, step)?;
            std::mem::swap(&mut cur, &mut next);
            visit(step + 1, &cur);
            if (step + 1) % stride == 0 {
                checkpoints.push(cur.clone());
            }
        }
        Ok(CheckpointedTrajectory { problem, theta, stride, checkpoints, cache: VecDeque::new(), stepper, recomputed: 0 })
    }

    pub fn n_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }
}

impl TrajectorySource for CheckpointedTrajectory<'_> {
    fn n_levels(&self) -> usize {
        self.problem.time.nt() + 1
    }

    fn level(&mut self, n: usize) -> Result<&[f64], ForwardError> {
        if n % self.stride == 0 {
            return Ok(&self.checkpoints[n / self.stride]);
        }
        let seg = n / self.stride;
        let pos = match self.cache.iter().position(|(s, _)| *s == seg) {
            Some(p) => p,
            None => {
                let nt = self.problem.time.nt();
                let dt = self.problem.time.dt();
                let start = seg * self.stride;
                let end = ((seg + 1) * self.stride).min(nt);
                let mut levels = Vec::with_capacity(end - start + 1);
                levels.push(self.checkpoints[seg].clone());
                for step in start..end {
                    let mut next = vec![0.0; levels[0].len()];
                    let prev = levels.last().unwrap();
                    self.stepper.step(
                        prev,
                        &self.theta.k,
                        &self.theta.d,
                        dt,
                        self.problem.external_at(step + 1),
                        &mut next,
                        step,
                    )?;
                    levels.push(next);
                    self.recomputed += 1;
                }
                if self.cache.len() == 2 {
                    self.cache.pop_front();
                }
                self.cache.push_back((seg, levels));
                self.cache.len() - 1
            }
        };
        let (s, levels) = &self.cache[pos];
        Ok(&levels[n - s * self.stride])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{fixtures, ReactionDecl, ReactionNetwork, SpeciesDecl};

    fn decay() -> Kinetics {
        let net = ReactionNetwork::new(
            vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("B", &["A"])],
            vec![ReactionDecl::new(&["A"], &["B"], "k")],
        )
        .unwrap();
        Kinetics::new(&net).unwrap()
    }

    #[test]
    fn steady_pure_diffusion_is_exact() {
        let net = ReactionNetwork::new(vec![SpeciesDecl::new("A", &["A"])], vec![]).unwrap();
        let kin = Kinetics::new(&net).unwrap();
        let grid = SpatialGrid::disk(12, 0.5).unwrap();
        let nc = grid.n_active();
        let mut st = Stepper::new(&kin, &grid, ForwardSettings::default());
        let u = vec![0.37; nc];
        let mut out = vec![0.0; nc];
        st.step(&u, &[], &[0.8], 0.1, &[], &mut out, 0).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn uniform_decay_matches_closed_form() {
        let kin = decay();
        let grid = SpatialGrid::rectangle(4, 3, 1.0, 1.0).unwrap();
        let nc = grid.n_active();
        let mut st = Stepper::new(&kin, &grid, ForwardSettings::default());
        let (k, dt) = (0.7, 0.2);
        let mut u = [vec![2.0; nc], vec![0.0; nc]].concat();
        let mut out = vec![0.0; 2 * nc];
        for n in 0..5 {
            st.step(&u, &[k], &[0.3, 0.3], dt, &[], &mut out, n).unwrap();
            std::mem::swap(&mut u, &mut out);
        }
        let want = 2.0 / (1.0 + k * dt).powi(5);
        for c in 0..nc {
            assert!((u[c] - want).abs() <= 1e-13 * want);
            assert!((u[c] + u[nc + c] - 2.0).abs() <= 1e-13);
        }
    }

    #[test]
    fn binding_step_conserves_moieties() {
        let net = fixtures::reversible_binding();
        let kin = Kinetics::new(&net).unwrap();
        let grid = SpatialGrid::disk(10, 0.3).unwrap();
        let nc = grid.n_active();
        let mut u = vec![0.0; 3 * nc];
        for c in 0..nc {
            let (x, y) = grid.centre(c);
            u[c] = 1.0 + x;
            u[nc + c] = 0.5 + y * y;
            u[2 * nc + c] = 0.2;
        }
        let mut out = vec![0.0; 3 * nc];
        let mut st = Stepper::new(&kin, &grid, ForwardSettings::default());
        st.step(&u, &[3.0, 0.4], &[0.5, 0.2, 0.05], 0.1, &[], &mut out, 0).unwrap();
        let total = |v: &[f64], a: usize| grid.integrate(&v[a * nc..(a + 1) * nc]).unwrap() + grid.integrate(&v[2 * nc..]).unwrap();
        for a in 0..2 {
            let (before, after) = (total(&u, a), total(&out, a));
            assert!((before - after).abs() <= 1e-10 * before, "{before} {after}");
        }
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_sweep_mode_runs_once() {
        let net = fixtures::reversible_binding();
        let kin = Kinetics::new(&net).unwrap();
        let grid = SpatialGrid::rectangle(3, 3, 1.0, 1.0).unwrap();
        let settings = ForwardSettings { max_picard: 1, ..Default::default() };
        let mut st = Stepper::new(&kin, &grid, settings);
        let u = vec![0.5; 27];
        let mut out = vec![0.0; 27];
        let rep = st.step(&u, &[1.0, 1.0], &[0.1; 3], 0.5, &[], &mut out, 0).unwrap();
        assert_eq!(rep.sweeps, 1);
        // (1 + dt·k·u_B) u_A = u_A + dt·kb·u_C
        assert!((out[0] - (0.5 + 0.5 * 0.5) / (1.0 + 0.5 * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn sweep_cap_is_an_error() {
        let net = fixtures::reversible_binding();
        let kin = Kinetics::new(&net).unwrap();
        let grid = SpatialGrid::rectangle(3, 3, 1.0, 1.0).unwrap();
        let settings = ForwardSettings { max_picard: 2, ..Default::default() };
        let mut st = Stepper::new(&kin, &grid, settings);
        let u = vec![0.5; 27];
        let mut out = vec![0.0; 27];
        let err = st.step(&u, &[5.0, 1.0], &[0.1; 3], 0.5, &[], &mut out, 7).unwrap_err();
        assert!(matches!(err, ForwardError::PicardNotConverged { step: 7, iterations: 2, .. }));
    }
}

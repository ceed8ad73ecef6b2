//! Cost, gradients and the working coordinates seen by the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adjoint::{adjoint_sweep, AdjointError, AdjointSettings, AdjointTrajectory};
use crate::forward::{solve_forward, CheckpointedTrajectory, ForwardError, StateTrajectory};
use crate::grid::{dot, SpatialGrid};
use crate::network::Kinetics;
use crate::problem::{Bound, IdentificationProblem, ObservationOperator, ParameterSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradientError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error("non-finite gradient component {0}")]
    NonFinite(String),
}

/// ∇_d J (len N), ∇_k J (len M) and ∇_I J as fields (q × nc).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d: Vec<f64>,
    pub k: Vec<f64>,
    pub initial: Vec<f64>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.d.iter().chain(&self.k).chain(&self.initial).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.d.iter().chain(&self.k).chain(&self.initial).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Whether the forward levels are all kept or recomputed from checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Full,
    Checkpointed { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSettings {
    pub adjoint: AdjointSettings,
    pub storage: Storage,
}

impl Default for GradientSettings {
    fn default() -> Self {
        GradientSettings { adjoint: AdjointSettings::default(), storage: Storage::Full }
    }
}

/// Squared misfit of one level, without the dt·area weight.
fn level_misfit(obs: &ObservationOperator, u: &[f64], c: &[f64], nc: usize) -> f64 {
    let mut s = 0.0;
    for (j, &i) in obs.observed().iter().enumerate() {
        for (a, b) in u[i * nc..(i + 1) * nc].iter().zip(&c[j * nc..(j + 1) * nc]) {
            s += (a - b) * (a - b);
        }
    }
    s
}

/// `J = ½ Σ_{n=1..nt} dt·hx·hy·‖F u^n − c^n‖²`.
pub fn cost(problem: &IdentificationProblem, u: &StateTrajectory) -> f64 {
    let nc = problem.n_cells();
    let w = 0.5 * problem.time.dt() * problem.grid.cell_area();
    (1..u.n_levels()).map(|n| w * level_misfit(&problem.observation, u.level(n), problem.data.level(n), nc)).sum()
}

/// `−dt Σ_n ⟨ζ_n,i, Δ_h u_i^{n+1}⟩` per species.
pub fn grad_d(grid: &SpatialGrid, u: &StateTrajectory, zeta: &AdjointTrajectory, dt: f64) -> Vec<f64> {
    let nc = grid.n_active();
    let mut lap = vec![0.0; nc];
    (0..u.n_fields())
        .map(|i| {
            let mut g = 0.0;
            for n in 0..u.n_levels() - 1 {
                grid.laplacian_into(u.field(n + 1, i), &mut lap);
                g -= dt * grid.cell_area() * dot(zeta.field(n, i), &lap);
            }
            g
        })
        .collect()
}

/// `−dt Σ_n ⟨ζ_n, ∂r/∂k(u^{n+1})⟩`, one entry per rate.
pub fn grad_k(problem: &IdentificationProblem, u: &StateTrajectory, zeta: &AdjointTrajectory) -> Vec<f64> {
    let kin: &Kinetics = &problem.kinetics;
    let (n, nc) = (kin.n_species(), problem.n_cells());
    let (dt, area) = (problem.time.dt(), problem.grid.cell_area());
    let mut jk = vec![0.0; n * kin.n_rates()];
    let mut g = vec![0.0; kin.n_rates()];
    let mut cu = vec![0.0; n];
    let mut ce = vec![0.0; kin.n_externals()];
    for lvl in 0..u.n_levels() - 1 {
        let (un, zn, ext) = (u.level(lvl + 1), zeta.level(lvl), problem.external_at(lvl + 1));
        for c in 0..nc {
            for i in 0..n {
                cu[i] = un[i * nc + c];
            }
            for (e, v) in ce.iter_mut().enumerate() {
                *v = ext[e * nc + c];
            }
            kin.jacobian_k_into(&cu, &ce, &mut jk);
            for (m, gm) in g.iter_mut().enumerate() {
                let s: f64 = (0..n).map(|i| jk[i * kin.n_rates() + m] * zn[i * nc + c]).sum();
                *gm -= dt * area * s;
            }
        }
    }
    g
}

/// `−ζ_0` restricted to the unknown species.
pub fn grad_i(obs: &ObservationOperator, zeta: &AdjointTrajectory) -> Vec<f64> {
    obs.unknown().iter().flat_map(|&i| zeta.field(0, i).iter().map(|v| -v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: GradientSet,
    /// max |ζ| over the backward sweep.
    pub adjoint_max: f64,
}

/// Cost only (one forward solve).
pub fn evaluate_cost(problem: &IdentificationProblem, theta: &ParameterSet) -> Result<f64, ForwardError> {
    Ok(cost(problem, &solve_forward(problem, theta)?))
}

/// Forward solve, backward sweep, and the three gradient quadratures.
pub fn full_gradient(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    settings: &GradientSettings,
) -> Result<Evaluation, GradientError> {
    let out = match settings.storage {
        Storage::Full => {
            let u = solve_forward(problem, theta)?;
            let j = cost(problem, &u);
            let mut src = &u;
            (j, adjoint_sweep(problem, theta, &mut src, &settings.adjoint, false)?)
        }
        Storage::Checkpointed { stride } => {
            let nc = problem.n_cells();
            let w = 0.5 * problem.time.dt() * problem.grid.cell_area();
            let mut j = 0.0;
            let mut ckpt = CheckpointedTrajectory::solve(problem, theta, stride, |n, u| {
                if n > 0 {
                    j += w * level_misfit(&problem.observation, u, problem.data.level(n), nc);
                }
            })?;
            (j, adjoint_sweep(problem, theta, &mut ckpt, &settings.adjoint, false)?)
        }
    };
    let (cost, sweep) = out;
    if !sweep.gradient.is_finite() {
        return Err(GradientError::NonFinite("adjoint gradient".into()));
    }
    Ok(Evaluation { cost, gradient: sweep.gradient, adjoint_max: sweep.max_abs })
}

/// Maps θ to the optimizer's vector: log d, log k, and √(hx·hy)·I so the
/// Euclidean norm on that block is the L² norm of the fields. Pinned
/// entries (lower == upper) are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    free_d: Vec<usize>,
    free_k: Vec<usize>,
    free_i: Vec<usize>,
    nc: usize,
    i_scale: f64,
}

impl CoordinateMap {
    pub fn new(theta: &ParameterSet, nc: usize, cell_area: f64) -> Self {
        let free = |b: &[Bound]| b.iter().enumerate().filter(|(_, b)| !b.pinned()).map(|(i, _)| i).collect();
        CoordinateMap {
            free_d: free(&theta.bounds.d),
            free_k: free(&theta.bounds.k),
            free_i: free(&theta.bounds.initial),
            nc,
            i_scale: cell_area.sqrt(),
        }
    }

    pub fn for_problem(problem: &IdentificationProblem, theta: &ParameterSet) -> Self {
        Self::new(theta, problem.n_cells(), problem.grid.cell_area())
    }

    pub fn len(&self) -> usize {
        self.free_d.len() + self.free_k.len() + self.free_i.len() * self.nc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_working(&self, theta: &ParameterSet) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(self.free_d.iter().map(|&i| theta.d[i].ln()));
        x.extend(self.free_k.iter().map(|&i| theta.k[i].ln()));
        for &j in &self.free_i {
            x.extend(theta.initial[j * self.nc..(j + 1) * self.nc].iter().map(|v| v * self.i_scale));
        }
        x
    }

    /// Writes the working vector into a copy of `template`; pinned entries
    /// take their pinned value.
    pub fn from_working(&self, x: &[f64], template: &ParameterSet) -> ParameterSet {
        let mut theta = template.clone();
        for (v, b) in theta.d.iter_mut().zip(&theta.bounds.d).chain(theta.k.iter_mut().zip(&theta.bounds.k)) {
            if b.pinned() {
                *v = b.lo;
            }
        }
        let mut it = x.iter();
        for &i in &self.free_d {
            theta.d[i] = it.next().unwrap().exp();
        }
        for &i in &self.free_k {
            theta.k[i] = it.next().unwrap().exp();
        }
        for &j in &self.free_i {
            for v in &mut theta.initial[j * self.nc..(j + 1) * self.nc] {
                *v = it.next().unwrap() / self.i_scale;
            }
        }
        theta
    }

    /// Chain rule into working coordinates: `θ·∂J/∂θ` for d and k, and
    /// `√(hx·hy)·∇_I J` for the field block.
    pub fn gradient_to_working(&self, g: &GradientSet, theta: &ParameterSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.free_d.iter().map(|&i| theta.d[i] * g.d[i]));
        out.extend(self.free_k.iter().map(|&i| theta.k[i] * g.k[i]));
        for &j in &self.free_i {
            out.extend(g.initial[j * self.nc..(j + 1) * self.nc].iter().map(|v| v * self.i_scale));
        }
        out
    }

    pub fn working_bounds(&self, theta: &ParameterSet) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = (Vec::with_capacity(self.len()), Vec::with_capacity(self.len()));
        for &i in &self.free_d {
            lo.push(theta.bounds.d[i].lo.ln());
            hi.push(theta.bounds.d[i].hi.ln());
        }
        for &i in &self.free_k {
            lo.push(theta.bounds.k[i].lo.ln());
            hi.push(theta.bounds.k[i].hi.ln());
        }
        for &j in &self.free_i {
            let b = theta.bounds.initial[j];
            lo.extend(std::iter::repeat(b.lo * self.i_scale).take(self.nc));
            hi.extend(std::iter::repeat(b.hi * self.i_scale).take(self.nc));
        }
        (lo, hi)
    }
}

/// One row of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
    /// Below the magnitude floor; counted as a pass.
    pub below_floor: bool,
}

impl CheckRow {
    pub fn passes(&self, threshold: f64) -> bool {
        self.below_floor || self.relative_error <= threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSettings {
    /// Central-difference step in log coordinates (d, k) and along I directions.
    pub step: f64,
    pub directions: usize,
    /// Components with |g| below floor·max|g| are not judged.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { step: 1e-3, directions: 3, floor: 1e-10, seed: 0 }
    }
}

fn relative_error(a: f64, f: f64) -> f64 {
    let scale = a.abs().max(f.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - f).abs() / scale
    }
}

/// Adjoint gradient against central differences of the discrete cost: one
/// row per d and k entry (in log coordinates) and one per random I
/// direction. `corrupt` perturbs the adjoint values, for negative controls.
pub fn gradient_check(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    grad: &GradientSettings,
    check: &CheckSettings,
    corrupt: bool,
) -> Result<Vec<CheckRow>, GradientError> {
    let eval = full_gradient(problem, theta, grad)?;
    let mut g = eval.gradient;
    if corrupt {
        for v in g.d.iter_mut().chain(g.k.iter_mut()).chain(g.initial.iter_mut()) {
            *v *= 1.1;
        }
    }
    let eps = check.step;
    let net = &problem.network;
    let mut rows = Vec::new();
    let mut adj = Vec::new();
    let mut fds = Vec::new();
    let mut names = Vec::new();

    let fd_log = |get: &dyn Fn(&mut ParameterSet) -> &mut f64| -> Result<f64, GradientError> {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        *get(&mut plus) *= eps.exp();
        *get(&mut minus) *= (-eps).exp();
        Ok((evaluate_cost(problem, &plus)? - evaluate_cost(problem, &minus)?) / (2.0 * eps))
    };
    for i in 0..net.n_species() {
        names.push(format!("d.{}", net.species()[i].name));
        adj.push(theta.d[i] * g.d[i]);
        fds.push(fd_log(&|t: &mut ParameterSet| &mut t.d[i])?);
    }
    for (m, name) in net.rate_names().enumerate() {
        names.push(format!("k.{name}"));
        adj.push(theta.k[m] * g.k[m]);
        fds.push(fd_log(&|t: &mut ParameterSet| &mut t.k[m])?);
    }
    let area = problem.grid.cell_area();
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    for dir in 0..check.directions {
        // relative perturbation keeps the initial state positive
        let delta: Vec<f64> = theta.initial.iter().map(|v| v * rng.gen_range(-1.0..1.0)).collect();
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        for ((p, m), dl) in plus.initial.iter_mut().zip(minus.initial.iter_mut()).zip(&delta) {
            *p += eps * dl;
            *m -= eps * dl;
        }
        names.push(format!("I.direction{}", dir + 1));
        adj.push(area * dot(&g.initial, &delta));
        fds.push((evaluate_cost(problem, &plus)? - evaluate_cost(problem, &minus)?) / (2.0 * eps));
    }
    let gmax = adj.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for ((name, a), f) in names.into_iter().zip(adj).zip(fds) {
        rows.push(CheckRow {
            name,
            adjoint: a,
            finite_difference: f,
            relative_error: relative_error(a, f),
            below_floor: a.abs().max(f.abs()) < check.floor * gmax,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorPoint {
    pub step: f64,
    /// |J(x + s·δ) − J(x) − s·⟨g, δ⟩|
    pub remainder: f64,
    /// Above the round-off floor and used in the fit.
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorTest {
    pub points: Vec<TaylorPoint>,
    /// Least-squares slope of log remainder against log step; `None` with
    /// fewer than two usable points.
    pub slope: Option<f64>,
}

/// Taylor remainder along a random direction in working coordinates
/// (log d, log k in [−1, 1]; initial fields relative, in [−1, 1]·I).
/// Remainders below `1e-10·|J|` are treated as round-off and not fitted.
pub fn taylor_test(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    grad: &GradientSettings,
    steps: &[f64],
    seed: u64,
) -> Result<TaylorTest, GradientError> {
    let map = CoordinateMap::for_problem(problem, theta);
    let x = map.to_working(theta);
    let eval = full_gradient(problem, theta, grad)?;
    let g = map.gradient_to_working(&eval.gradient, theta);
    let n_log = map.free_d.len() + map.free_k.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, v)| rng.gen_range(-1.0..1.0) * if j < n_log { 1.0 } else { *v })
        .collect();
    let slope0 = dot(&g, &delta);
    let floor = 1e-10 * eval.cost.abs();
    let mut points = Vec::with_capacity(steps.len());
    for &s in steps {
        let xs: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
        let js = evaluate_cost(problem, &map.from_working(&xs, theta))?;
        let remainder = (js - eval.cost - s * slope0).abs();
        points.push(TaylorPoint { step: s, remainder, fitted: remainder > floor });
    }
    let used: Vec<(f64, f64)> =
        points.iter().filter(|p| p.fitted).map(|p| (p.step.ln(), p.remainder.ln())).collect();
    let slope = (used.len() >= 2).then(|| {
        let n = used.len() as f64;
        let (mx, my) = used.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let sxy: f64 = used.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = used.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        sxy / sxx
    });
    Ok(TaylorTest { points, slope })
}

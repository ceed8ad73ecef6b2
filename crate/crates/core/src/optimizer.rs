//! Projected L-BFGS with Armijo backtracking along the projected path.

use std::collections::VecDeque;
use std::time::Instant;

use log::debug;
use thiserror::Error;

use crate::gradient::{full_gradient, CoordinateMap, GradientError, GradientSettings};
use crate::problem::{IdentificationProblem, ParameterSet, ProblemError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when ‖P(x − g) − x‖∞ ≤ tolerance.
    pub tolerance: f64,
    pub sufficient_decrease: f64,
    pub shrink: f64,
    pub max_trials: usize,
    /// Wall-clock budget in seconds; checked between iterations.
    pub time_limit: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            memory: 10,
            max_iterations: 200,
            tolerance: 1e-6,
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            max_trials: 30,
            time_limit: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.memory >= 1
            && self.max_iterations >= 1
            && self.max_trials >= 1
            && self.tolerance > 0.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.time_limit.map_or(true, |t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(format!("invalid optimizer settings {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub projected_gradient: f64,
    pub step: f64,
    pub trials: usize,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,cost,projected_gradient,step,trials,wall_time";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{},{:.3}",
            self.iteration, self.cost, self.projected_gradient, self.step, self.trials, self.wall_time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationCap,
    TimeLimit,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub status: Status,
    /// Iteration 0 is the starting point.
    pub log: Vec<IterationRecord>,
}

/// Elementwise clamp into `[lo, hi]`.
pub fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(*l).min(*h);
    }
}

/// ‖P(x − g) − x‖∞.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((x, g), (l, h))| ((x - g).max(*l).min(*h) - x).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Curvature pairs, oldest first, at most `memory` of them.
#[derive(Debug, Clone, Default)]
pub struct History {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl History {
    pub fn new(memory: usize) -> Self {
        History { memory, pairs: VecDeque::with_capacity(memory) }
    }

    /// Stores the pair unless sᵀy ≤ 1e-10·‖s‖‖y‖. Returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            debug!("curvature pair dropped (sᵀy = {sy:e})");
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &(Vec<f64>, Vec<f64>)> + ExactSizeIterator {
        self.pairs.iter()
    }
}

/// `−H g` by the two-loop recursion, with `H₀ = γ I`, `γ = sᵀy / yᵀy` of the
/// newest pair. Pairs with sᵀy ≤ 0 are skipped.
pub fn two_loop_direction(history: &History, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let usable: Vec<_> = history.pairs().filter(|(s, y)| dot(s, y) > 0.0).collect();
    let mut alpha = vec![0.0; usable.len()];
    for (j, (s, y)) in usable.iter().enumerate().rev() {
        let rho = 1.0 / dot(s, y);
        alpha[j] = rho * dot(s, &q);
        q.iter_mut().zip(y.iter()).for_each(|(qi, yi)| *qi -= alpha[j] * yi);
    }
    if let Some((s, y)) = usable.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (j, (s, y)) in usable.iter().enumerate() {
        let rho = 1.0 / dot(s, y);
        let beta = rho * dot(y, &q);
        q.iter_mut().zip(s.iter()).for_each(|(qi, si)| *qi += (alpha[j] - beta) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Widest distance from a bound at which a component counts as active.
pub const ACTIVE_MARGIN: f64 = 1e-3;

/// Minimises `f` over the box. `f` returns the cost and its gradient; an
/// error at a trial point counts as a failed trial, an error at the start
/// is returned.
pub fn minimize_box<E>(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    settings: &OptimizerSettings,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<Minimum, E> {
    let start = Instant::now();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut history = History::new(settings.memory);
    let mut log = Vec::new();
    let mut pg = projected_gradient_norm(&x, &g, lo, hi);
    let rec = IterationRecord { iteration: 0, cost: fx, projected_gradient: pg, step: 0.0, trials: 0, wall_time: 0.0 };
    on_iteration(&rec);
    log.push(rec);

    let mut status = Status::IterationCap;
    for iteration in 1..=settings.max_iterations {
        if pg <= settings.tolerance {
            status = Status::Converged;
            break;
        }
        if settings.time_limit.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            status = Status::TimeLimit;
            break;
        }
        // components within `margin` of a bound and pushing outward take a
        // scaled gradient step; the quasi-Newton model covers the rest
        let margin = pg.min(ACTIVE_MARGIN);
        let active: Vec<bool> = (0..x.len())
            .map(|j| (x[j] <= lo[j] + margin && g[j] > 0.0) || (x[j] >= hi[j] - margin && g[j] < 0.0))
            .collect();
        let free = |v: &[f64]| -> Vec<f64> { v.iter().zip(&active).map(|(a, &act)| if act { 0.0 } else { *a }).collect() };
        let mut reduced = History::new(settings.memory);
        for (s, y) in history.pairs() {
            reduced.push(free(s), free(y));
        }
        let gz = free(&g);
        let mut dir = two_loop_direction(&reduced, &gz);
        let gamma = reduced.pairs().last().map_or(1.0, |(s, y)| dot(s, y) / dot(y, y));
        for j in 0..x.len() {
            if active[j] {
                dir[j] = -gamma * g[j];
            }
        }
        if !(dot(&dir, &g) < 0.0) {
            debug!("iteration {iteration}: not a descent direction, restarting from −g");
            history.clear();
            reduced.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        // without usable curvature pairs the direction is −g, unscaled
        let mut alpha = if reduced.is_empty() {
            // unit move of the largest component
            1.0 / g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        } else {
            1.0
        };

        let mut accepted = None;
        let mut trials = 0;
        while trials < settings.max_trials {
            trials += 1;
            let mut xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            project(&mut xt, lo, hi);
            let decrease: f64 = g.iter().zip(xt.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
            if decrease < 0.0 {
                match f(&xt) {
                    Ok((ft, gt)) if ft.is_finite() && ft <= fx + settings.sufficient_decrease * decrease => {
                        accepted = Some((xt, ft, gt));
                        break;
                    }
                    Ok(_) => {}
                    Err(_) => debug!("iteration {iteration}: trial {trials} failed to evaluate"),
                }
            }
            alpha *= settings.shrink;
        }
        let Some((xt, ft, gt)) = accepted else {
            status = Status::LineSearchFailure;
            break;
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        history.push(s, y);
        x = xt;
        fx = ft;
        g = gt;
        pg = projected_gradient_norm(&x, &g, lo, hi);
        let rec = IterationRecord {
            iteration,
            cost: fx,
            projected_gradient: pg,
            step: alpha,
            trials,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_iteration(&rec);
        log.push(rec);
        if iteration == settings.max_iterations && pg <= settings.tolerance {
            status = Status::Converged;
        }
    }
    Ok(Minimum { x, cost: fx, gradient: g, status, log })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error("{0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identified {
    pub theta: ParameterSet,
    pub cost: f64,
    pub status: Status,
    pub log: Vec<IterationRecord>,
}

/// Fits θ to the problem data, starting from `theta0` (which must be in
/// bounds). Runs in the working coordinates of [`CoordinateMap`].
pub fn optimize(
    problem: &IdentificationProblem,
    theta0: &ParameterSet,
    settings: &OptimizerSettings,
    gradient: &GradientSettings,
    on_iteration: impl FnMut(&IterationRecord),
) -> Result<Identified, OptimizeError> {
    settings.validate().map_err(OptimizeError::Settings)?;
    problem.check_parameters(theta0)?;
    theta0.check_bounds()?;
    let map = CoordinateMap::for_problem(problem, theta0);
    let (lo, hi) = map.working_bounds(theta0);
    let x0 = map.to_working(theta0);
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>), GradientError> {
        let theta = map.from_working(x, theta0);
        let e = full_gradient(problem, &theta, gradient)?;
        Ok((e.cost, map.gradient_to_working(&e.gradient, &theta)))
    };
    let min = minimize_box(eval, &x0, &lo, &hi, settings, on_iteration)?;
    let mut theta = map.from_working(&min.x, theta0);
    // exp∘ln can land one ulp outside a bound
    theta.project();
    Ok(Identified { theta, cost: min.cost, status: min.status, log: min.log })
}

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rdident_core::bundled;
use rdident_core::grid::SpatialGrid;
use rdident_core::problem::{IdentificationProblem, LevelStack, ObservationOperator, ParameterSet, TimeAxis};
use rdident_core::synth;

/// Three-protein twin on `grid`: data from a random θ*, and a second random θ.
pub fn three_protein_twin(grid: SpatialGrid, t_final: f64, nt: usize, seed: u64) -> (IdentificationProblem, ParameterSet, ParameterSet) {
    let net = bundled::three_protein().unwrap();
    let obs = ObservationOperator::from_network(&net).unwrap();
    let nc = grid.n_active();
    let data = LevelStack::zeros(obs.n_observed(), nc, nt + 1);
    let problem = IdentificationProblem::new(net, grid, TimeAxis::new(t_final, nt).unwrap(), obs, data, LevelStack::zeros(0, nc, nt + 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = problem.default_bounds();
    let truth = synth::random_parameters(&mut rng, &problem, &bounds);
    let observed_initial = synth::random_observed_initial(&mut rng, &problem);
    let problem = synth::synthesize(problem, &truth, &observed_initial).unwrap();
    let other = synth::random_parameters(&mut rng, &problem, &bounds);
    (problem, truth, other)
}

/// Least-squares slope of log(err) against log(h).
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h.iter().zip(err).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

//! Random compliant networks, random admissible parameters and twin data.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::forward::{solve_forward, ForwardError};
use crate::grid::SpatialGrid;
use crate::network::{ReactionDecl, ReactionNetwork, SpeciesDecl};
use crate::problem::{Bound, Bounds, IdentificationProblem, LevelStack, ParameterSet, INITIAL};

struct Draft {
    name: String,
    composition: Vec<String>,
}

/// A random network that satisfies the kinetics assumptions: base proteins
/// with optional modified variants, complexes built by pairwise binding
/// (category at most 3), binding/unbinding, variant conversions, and
/// sometimes an external ligand. At most `max_species` state species.
pub fn random_network<R: Rng>(rng: &mut R, max_species: usize) -> ReactionNetwork {
    let max_species = max_species.max(2);
    let proteins = ["A", "B", "C", "D"];
    let n_proteins = rng.gen_range(2..=3);
    let mut species: Vec<Draft> = Vec::new();
    for p in &proteins[..n_proteins] {
        if species.len() < max_species {
            species.push(Draft { name: p.to_string(), composition: vec![p.to_string()] });
        }
        if species.len() < max_species && rng.gen_bool(0.6) {
            species.push(Draft { name: format!("p{p}"), composition: vec![p.to_string()] });
        }
    }
    let target = rng.gen_range(species.len()..=max_species);
    let mut bindings: Vec<(usize, usize, usize)> = Vec::new();
    let mut attempts = 0;
    while species.len() < target && attempts < 100 {
        attempts += 1;
        let (x, y) = (rng.gen_range(0..species.len()), rng.gen_range(0..species.len()));
        if x == y || species[x].composition.len() + species[y].composition.len() > 3 {
            continue;
        }
        let name = format!("{}/{}", species[x].name, species[y].name);
        let flipped = format!("{}/{}", species[y].name, species[x].name);
        if species.iter().any(|s| s.name == name || s.name == flipped) {
            continue;
        }
        let mut composition = [species[x].composition.clone(), species[y].composition.clone()].concat();
        composition.sort();
        species.push(Draft { name, composition });
        bindings.push((x, y, species.len() - 1));
    }

    let mut reactions: Vec<ReactionDecl> = Vec::new();
    let mut rate = 0;
    let mut next_rate = || {
        rate += 1;
        format!("k{rate}")
    };
    let name = |i: usize| species[i].name.as_str();
    let variant_of = |i: usize| {
        (0..species.len()).find(|&j| j != i && species[j].composition == species[i].composition && species[j].composition.len() == 1)
    };
    for &(x, y, z) in &bindings {
        reactions.push(ReactionDecl::new(&[name(x), name(y)], &[name(z)], next_rate()));
        if rng.gen_bool(0.8) {
            reactions.push(ReactionDecl::new(&[name(z)], &[name(x), name(y)], next_rate()).backward());
        }
        if let Some(xv) = variant_of(x) {
            if rng.gen_bool(0.3) {
                reactions.push(ReactionDecl::new(&[name(z)], &[name(xv), name(y)], next_rate()));
            }
        }
    }
    for i in 0..species.len() {
        if let Some(j) = variant_of(i) {
            if i < j && rng.gen_bool(0.7) {
                reactions.push(ReactionDecl::new(&[name(j)], &[name(i)], next_rate()));
                if rng.gen_bool(0.5) {
                    reactions.push(ReactionDecl::new(&[name(i)], &[name(j)], next_rate()).backward());
                }
            }
        }
    }
    let mut externals = Vec::new();
    if let Some(&(x, _, z)) = bindings.choose(rng) {
        if rng.gen_bool(0.3) {
            externals.push(SpeciesDecl::new("L", &["L"]).external());
            reactions.push(ReactionDecl::new(&[name(x), "L"], &[name(z)], next_rate()));
        }
    }
    if reactions.is_empty() {
        // two base proteins always exist
        reactions.push(ReactionDecl::new(&[name(0)], &[name(1)], next_rate()));
    }
    let observed = rng.gen_range(0..species.len());
    let decls: Vec<SpeciesDecl> = species
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let comp: Vec<&str> = s.composition.iter().map(String::as_str).collect();
            let mut d = SpeciesDecl::new(s.name.clone(), &comp);
            if i == observed {
                d = d.observed();
            }
            if rng.gen_bool(0.25) {
                d = d.membrane();
            }
            d
        })
        .chain(externals)
        .collect();
    ReactionNetwork::new(decls, reactions).expect("generator only builds compliant networks")
}

/// Log-uniform draw inside the bound (the lower end for pinned entries).
pub fn log_uniform<R: Rng>(rng: &mut R, b: Bound) -> f64 {
    if b.pinned() {
        b.lo
    } else {
        b.clamp(rng.gen_range(b.lo.ln()..b.hi.ln()).exp())
    }
}

/// A smooth positive field inside the bound: a random level in the middle
/// 80 % of the range, modulated by one low cosine mode.
pub fn smooth_field<R: Rng>(rng: &mut R, grid: &SpatialGrid, b: Bound) -> Vec<f64> {
    let span = b.hi - b.lo;
    let level = b.lo + span * rng.gen_range(0.1..0.9);
    let amplitude = rng.gen_range(0.0..0.4);
    let (mx, my) = (rng.gen_range(0..=2) as f64, rng.gen_range(0..=2) as f64);
    let (px, py) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let (lx, ly) = (grid.nx() as f64 * grid.hx(), grid.ny() as f64 * grid.hy());
    let pi = std::f64::consts::PI;
    (0..grid.n_active())
        .map(|c| {
            let (x, y) = grid.centre(c);
            let m = (pi * mx * x / lx + px).cos() * (pi * my * y / ly + py).cos();
            b.clamp(level * (1.0 + amplitude * m))
        })
        .collect()
}

/// d and k log-uniform in their bounds, unknown initial fields smooth.
pub fn random_parameters<R: Rng>(rng: &mut R, problem: &IdentificationProblem, bounds: &Bounds) -> ParameterSet {
    let d = bounds.d.iter().map(|&b| log_uniform(rng, b)).collect();
    let k = bounds.k.iter().map(|&b| log_uniform(rng, b)).collect();
    let initial = bounds.initial.iter().flat_map(|&b| smooth_field(rng, &problem.grid, b)).collect();
    ParameterSet { d, k, initial, bounds: bounds.clone() }
}

/// Smooth initial fields for the observed species (`n_observed × nc`).
pub fn random_observed_initial<R: Rng>(rng: &mut R, problem: &IdentificationProblem) -> Vec<f64> {
    (0..problem.observation.n_observed()).flat_map(|_| smooth_field(rng, &problem.grid, INITIAL)).collect()
}

/// Replaces the problem data by `F u` of the forward solve at `theta`,
/// with `observed_initial` as the observed species' level-0 fields.
pub fn synthesize(
    mut problem: IdentificationProblem,
    theta: &ParameterSet,
    observed_initial: &[f64],
) -> Result<IdentificationProblem, ForwardError> {
    let (nq, nc, nt) = (problem.observation.n_observed(), problem.n_cells(), problem.time.nt());
    problem.data = LevelStack::new(nq, nc, vec![observed_initial.to_vec(); nt + 1])?;
    let u = solve_forward(&problem, theta)?;
    let data = (0..=nt).map(|n| problem.observation.observe(u.level(n), nc)).collect();
    problem.data = LevelStack::new(nq, nc, data)?;
    Ok(problem)
}

//! Turns a [`RunConfig`] into an identification problem, bounds and a
//! starting θ.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rand::Rng;
use rdident_core::bundled;
use rdident_core::dsl;
use rdident_core::field_file::FieldFile;
use rdident_core::grid::{load_mask, SpatialGrid};
use rdident_core::network::{validate_assumptions, ReactionNetwork};
use rdident_core::problem::{
    Bound, Bounds, IdentificationProblem, LevelStack, ObservationOperator, ParameterSet, TimeAxis,
    INITIAL,
};
use rdident_core::synth::{log_uniform, smooth_field};

use crate::config::{Preset, RunConfig, Shape, Start};
use crate::theta_file::ThetaValues;

/// Diffusivity the f-actin preset pins for the polymerised actin species.
pub const PINNED_ACTIN_D: f64 = 1e-16;

/// Network text for `bundled:<name>` or a file path relative to `base`.
pub fn network_source(spec: &str, base: &Path) -> anyhow::Result<String> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        return bundled::source(name)
            .map(str::to_string)
            .with_context(|| format!("no bundled network `{name}`"));
    }
    let path = resolve(base, Path::new(spec));
    std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub struct Setup {
    pub config: RunConfig,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
    pub problem: IdentificationProblem,
    pub bounds: Bounds,
    /// Bounds for the observed species' initial fields (simulate only).
    pub observed_bounds: Vec<Bound>,
    pub has_data: bool,
}

impl Setup {
    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base, &self.config.paths.output)
    }
}

fn load_levels(
    path: &Path,
    grid: &SpatialGrid,
    n_fields: usize,
    nt: usize,
    what: &str,
) -> anyhow::Result<LevelStack> {
    let file =
        FieldFile::load(path).with_context(|| format!("reading {what} file {}", path.display()))?;
    ensure!(
        file.matches_grid(grid),
        "{what} file is {}×{}, the grid is {}×{}",
        file.nx,
        file.ny,
        grid.nx(),
        grid.ny()
    );
    ensure!(
        file.n_fields == n_fields,
        "{what} file has {} fields, expected {n_fields}",
        file.n_fields
    );
    ensure!(file.nt_plus_1 >= 1, "{what} file has no levels");
    let levels: Vec<Vec<f64>> = (0..file.nt_plus_1)
        .map(|t| {
            (0..n_fields)
                .flat_map(|f| file.active_values(grid, t, f))
                .collect()
        })
        .collect();
    ensure!(
        levels.iter().flatten().all(|v| v.is_finite()),
        "{what} file has missing values inside the domain"
    );
    let stack = LevelStack::new(n_fields, grid.n_active(), levels)?;
    if stack.n_levels() != nt + 1 {
        log::info!(
            "resampling {what} from {} to {} levels",
            stack.n_levels(),
            nt + 1
        );
    }
    Ok(stack.resample(nt + 1))
}

pub fn build(config: RunConfig, base: &Path) -> anyhow::Result<Setup> {
    let text = network_source(&config.paths.network, base)?;
    let network = dsl::parse_network(&text).context("parsing the network")?;
    let report = validate_assumptions(&network);
    ensure!(
        report.is_compliant(),
        "network violates the kinetics assumptions:\n{report}"
    );

    let observation = match &config.observed {
        None => ObservationOperator::from_network(&network)?,
        Some(names) => {
            let idx = names
                .iter()
                .map(|n| {
                    network
                        .species_index(n)
                        .with_context(|| format!("observed species `{n}` not in the network"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            ObservationOperator::new(network.n_species(), idx)?
        }
    };

    let dom = &config.domain;
    let grid = match &config.paths.mask {
        Some(p) => {
            let g = load_mask(resolve(base, p), dom.mask_kind).context("loading the mask")?;
            ensure!(
                g.nx() == dom.nx && g.ny() == dom.ny,
                "mask is {}×{}, config says {}×{}",
                g.nx(),
                g.ny(),
                dom.nx,
                dom.ny
            );
            g
        }
        None => match dom.shape {
            Shape::Rectangle => SpatialGrid::rectangle(dom.nx, dom.ny, dom.hx, dom.hy)?,
            Shape::Disk => SpatialGrid::disk(dom.nx, dom.hx)?,
        },
    };
    let time = TimeAxis::new(config.t_final, config.nt)?;
    let (nc, nt) = (grid.n_active(), config.nt);

    let (data, has_data) = match &config.paths.data {
        Some(p) => {
            let mut d = load_levels(
                &resolve(base, p),
                &grid,
                observation.n_observed(),
                nt,
                "data",
            )?;
            // noisy data may dip below zero; the observed initial state may not
            for v in d.level_mut(0) {
                *v = v.max(0.0);
            }
            (d, true)
        }
        None => (
            LevelStack::zeros(observation.n_observed(), nc, nt + 1),
            false,
        ),
    };
    let n_ext = network.n_externals();
    let external = match (&config.paths.external, n_ext) {
        (_, 0) => LevelStack::zeros(0, nc, 0),
        (Some(p), _) => load_levels(&resolve(base, p), &grid, n_ext, nt, "external")?,
        (None, _) => bail!("the network has external species; set [paths] external"),
    };

    let (bounds, observed_bounds) = configured_bounds(&config, &network, &observation)?;
    let problem = IdentificationProblem::new(network, grid, time, observation, data, external)?;
    Ok(Setup {
        config,
        base: base.to_path_buf(),
        problem,
        bounds,
        observed_bounds,
        has_data,
    })
}

enum Target {
    D(usize),
    K(usize),
    Unknown(usize),
    Observed(usize),
}

fn target(
    name: &str,
    network: &ReactionNetwork,
    obs: &ObservationOperator,
) -> anyhow::Result<Target> {
    let species = |s: &str| {
        network
            .species_index(s)
            .with_context(|| format!("`{name}`: no species `{s}`"))
    };
    if let Some(s) = name.strip_prefix("d.") {
        Ok(Target::D(species(s)?))
    } else if let Some(r) = name.strip_prefix("k.") {
        Ok(Target::K(network.rate_index(r).with_context(|| {
            format!("`{name}`: no rate constant `{r}`")
        })?))
    } else if let Some(s) = name.strip_prefix("I.") {
        let i = species(s)?;
        Ok(match obs.unknown().iter().position(|&u| u == i) {
            Some(j) => Target::Unknown(j),
            None => Target::Observed(obs.observed().iter().position(|&o| o == i).unwrap()),
        })
    } else {
        bail!("unknown parameter `{name}`")
    }
}

fn configured_bounds(
    config: &RunConfig,
    network: &ReactionNetwork,
    obs: &ObservationOperator,
) -> anyhow::Result<(Bounds, Vec<Bound>)> {
    let mut bounds = Bounds::defaults(network, obs);
    let mut observed = vec![INITIAL; obs.n_observed()];
    if config.parameters.preset == Preset::Factin {
        let i = network
            .species_index("Actin_on")
            .context("the factin preset needs a species `Actin_on`")?;
        bounds.d[i] = Bound::new(PINNED_ACTIN_D, PINNED_ACTIN_D);
    }
    for (name, entry) in &config.parameters.entries {
        let Some((lo, hi)) = entry.bounds else {
            continue;
        };
        let b = Bound::new(lo, hi);
        match target(name, network, obs)? {
            Target::D(i) => bounds.d[i] = b,
            Target::K(r) => bounds.k[r] = b,
            Target::Unknown(j) => bounds.initial[j] = b,
            Target::Observed(j) => observed[j] = b,
        }
    }
    Ok((bounds, observed))
}

fn midpoint_log(b: Bound) -> f64 {
    b.clamp((b.lo.ln() * 0.5 + b.hi.ln() * 0.5).exp())
}

/// Starting θ and observed initial fields. Every draw is taken from `rng`
/// in a fixed order (d, k, unknown fields, observed fields) before any
/// override, so the stream does not depend on which values are given.
/// Precedence: parameter file, then config values, then the start rule.
pub fn starting_theta<R: Rng>(
    setup: &Setup,
    rng: &mut R,
    file: Option<&ThetaValues>,
) -> anyhow::Result<(ParameterSet, Vec<f64>)> {
    let p = &setup.problem;
    let (net, obs, nc) = (&p.network, &p.observation, p.n_cells());
    let b = &setup.bounds;
    let random = setup.config.parameters.start == Start::Random;

    let mut d: Vec<f64> = b.d.iter().map(|&x| log_uniform(rng, x)).collect();
    let mut k: Vec<f64> = b.k.iter().map(|&x| log_uniform(rng, x)).collect();
    let mut initial: Vec<f64> = b
        .initial
        .iter()
        .flat_map(|&x| smooth_field(rng, &p.grid, x))
        .collect();
    let mut observed: Vec<f64> = setup
        .observed_bounds
        .iter()
        .flat_map(|&x| smooth_field(rng, &p.grid, x))
        .collect();
    if !random {
        d = b.d.iter().map(|&x| midpoint_log(x)).collect();
        k = b.k.iter().map(|&x| midpoint_log(x)).collect();
        initial = b
            .initial
            .iter()
            .flat_map(|x| vec![0.5 * (x.lo + x.hi); nc])
            .collect();
        observed = setup
            .observed_bounds
            .iter()
            .flat_map(|x| vec![0.5 * (x.lo + x.hi); nc])
            .collect();
    }
    if setup.has_data {
        observed = p.data.level(0).to_vec();
    }

    let mut assign = |name: &str, values: &[f64]| -> anyhow::Result<()> {
        let scalar = |values: &[f64]| {
            ensure!(values.len() == 1, "`{name}` takes one value");
            Ok(values[0])
        };
        let field = |values: &[f64]| {
            ensure!(
                values.len() == 1 || values.len() == nc,
                "`{name}` needs 1 or {nc} values, found {}",
                values.len()
            );
            Ok(if values.len() == 1 {
                vec![values[0]; nc]
            } else {
                values.to_vec()
            })
        };
        match target(name, net, obs)? {
            Target::D(i) => d[i] = scalar(values)?,
            Target::K(r) => k[r] = scalar(values)?,
            Target::Unknown(j) => initial[j * nc..(j + 1) * nc].copy_from_slice(&field(values)?),
            Target::Observed(j) => observed[j * nc..(j + 1) * nc].copy_from_slice(&field(values)?),
        }
        Ok(())
    };
    for (name, entry) in &setup.config.parameters.entries {
        if let Some(v) = entry.value {
            assign(name, &[v])?;
        }
    }
    if let Some(f) = file {
        for (name, v) in &f.scalars {
            assign(name, &[*v])?;
        }
        for (name, v) in &f.fields {
            assign(name, v)?;
        }
    }

    let theta = ParameterSet {
        d,
        k,
        initial,
        bounds: b.clone(),
    };
    p.check_parameters(&theta)?;
    theta.check_bounds().context("starting parameters")?;
    ensure!(
        observed.iter().all(|v| v.is_finite() && *v >= 0.0),
        "observed initial fields must be nonnegative"
    );
    Ok((theta, observed))
}

/// Reads `[paths] parameters` when set.
pub fn parameter_file(setup: &Setup) -> anyhow::Result<Option<ThetaValues>> {
    setup
        .config
        .paths
        .parameters
        .as_ref()
        .map(|p| ThetaValues::load(&resolve(&setup.base, p)))
        .transpose()
}

/// Writes levels of `n_fields × nc` values as a field file on the grid.
pub fn to_field_file(grid: &SpatialGrid, dt: f64, stack: &LevelStack) -> FieldFile {
    let mut f = FieldFile::new(
        grid.nx(),
        grid.ny(),
        stack.n_levels(),
        stack.n_fields(),
        grid.hx(),
        grid.hy(),
        dt,
    );
    for t in 0..stack.n_levels() {
        for k in 0..stack.n_fields() {
            f.set_active(grid, t, k, stack.field(t, k));
        }
    }
    f
}

//! The five commands. Each writes its report to `out`, its files to the
//! configured output directory, and returns an [`Outcome`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rdident_core::adjoint::solve_adjoint;
use rdident_core::dsl;
use rdident_core::field_file::FieldFile;
use rdident_core::forward::solve_forward;
use rdident_core::gradient::{
    gradient_check, taylor_test, CheckSettings, GradientSettings, Storage,
};
use rdident_core::network::{
    build_l_certificate, build_reaction_functions, check_quasi_positivity, check_sum_bound,
    validate_assumptions, Direction,
};
use rdident_core::optimizer::{optimize, IterationRecord, Status};
use rdident_core::linalg::CgSettings;
use rdident_core::problem::LevelStack;

use crate::setup::{network_source, parameter_file, starting_theta, to_field_file, Setup};
use crate::theta_file::format_theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NonCompliant,
    GradientMismatch,
    IterationCap,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NonCompliant => 2,
            Outcome::GradientMismatch => 3,
            Outcome::IterationCap => 4,
        }
    }
}

pub const SIMULATED_FILE: &str = "simulated.rdrd";
pub const STATE_FILE: &str = "state.rdrd";
pub const TRUTH_FILE: &str = "truth.theta";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const TAYLOR_FILE: &str = "taylor.csv";
pub const THETA_FILE: &str = "theta.txt";
pub const LOG_FILE: &str = "log.csv";
pub const FITTED_FILE: &str = "fitted.rdrd";
pub const ADJOINT_FILE: &str = "adjoint.rdrd";

/// Central-difference step for gradcheck, in log d, log k and along
/// relative I directions.
pub const CHECK_STEP: f64 = 1e-2;

/// Picard and CG tolerance of the solves inside gradcheck.
pub const CHECK_SOLVER_TOL: f64 = 1e-14;

/// Steps of the Taylor remainder test, in working coordinates.
pub const TAYLOR_STEPS: [f64; 4] = [1e-2, 3e-3, 1e-3, 3e-4];

/// The seed drives two streams: simulated truth and noise, and starting
/// points for gradcheck and identify. Re-using one config and seed for
/// simulate and identify therefore does not start at the truth.
pub fn rng_for(seed: u64, starting_point: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(starting_point as u64);
    rng
}

fn gradient_settings(setup: &Setup) -> GradientSettings {
    let storage = match setup.config.optimizer.checkpoint_stride {
        0 => Storage::Full,
        stride => Storage::Checkpointed { stride },
    };
    GradientSettings {
        storage,
        ..GradientSettings::default()
    }
}

fn prepare_output(setup: &Setup) -> anyhow::Result<std::path::PathBuf> {
    let dir = setup.output_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Network report: category table, assumption check, certificates.
pub fn validate(network: &str, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let text = network_source(network, Path::new("."))?;
    let net = dsl::parse_network(&text)?;
    writeln!(out, "species ({}), in category order:", net.n_species())?;
    writeln!(
        out,
        "  {:>3}  {:<16} {:>8}  {:<8} {:<8} composition",
        "#", "name", "category", "membrane", "observed"
    )?;
    for (i, s) in net.species().iter().enumerate() {
        let yes = |b: bool| if b { "yes" } else { "no" };
        writeln!(
            out,
            "  {:>3}  {:<16} {:>8}  {:<8} {:<8} {}",
            i + 1,
            s.name,
            s.category(),
            yes(s.membrane),
            yes(s.observed),
            s.composition.join("+")
        )?;
    }
    for e in net.externals() {
        writeln!(out, "  external: {}", e.name)?;
    }
    writeln!(out, "reactions ({} rate constants):", net.n_rates())?;
    for (i, r) in net.reactions().iter().enumerate() {
        let dir = match r.direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        };
        writeln!(
            out,
            "  {:<6} {:<9} {}",
            r.rate_name,
            dir,
            net.describe_reaction(i)
        )?;
    }

    let report = validate_assumptions(&net);
    write!(out, "assumptions: {report}")?;
    if !report.is_compliant() {
        writeln!(out, "result: non-compliant")?;
        return Ok(Outcome::NonCompliant);
    }

    let forms = build_reaction_functions(&net)?;
    writeln!(out, "reaction functions:")?;
    for (s, f) in net.species().iter().zip(&forms) {
        writeln!(out, "  r[{}] = {}", s.name, f.display(&net))?;
    }
    let qp = check_quasi_positivity(&net)?;
    writeln!(
        out,
        "quasi-positivity: holds; every negative term of r_i carries u_i ({} negative terms)",
        qp.negative_terms.iter().sum::<usize>()
    )?;
    let sum = check_sum_bound(&net)?;
    let k_hi: Vec<f64> = net
        .reactions()
        .iter()
        .map(|r| match r.direction {
            Direction::Forward => rdident_core::problem::FORWARD_K.hi,
            Direction::Backward => rdident_core::problem::BACKWARD_K.hi,
        })
        .collect();
    let ext_one = vec![1.0; net.n_externals()];
    writeln!(out, "sum bound: sum of r_i = {}", sum.sum.display(&net))?;
    writeln!(
        out,
        "  quadratic part non-positive; sum r_i <= a (1 + sum u_i) with a = {:e} at the upper rate bounds and unit external fields",
        sum.bound_constant(&k_hi, &ext_one)
    )?;
    let l = build_l_certificate(&net)?;
    writeln!(
        out,
        "L matrix ({0}×{0}, lower triangular, unit diagonal):",
        l.matrix.nrows()
    )?;
    for i in 0..l.matrix.nrows() {
        let row: Vec<String> = (0..l.matrix.ncols())
            .map(|j| format!("{}", l.matrix[(i, j)]))
            .collect();
        writeln!(out, "  {}", row.join(" "))?;
    }
    writeln!(out, "result: compliant")?;
    Ok(Outcome::Success)
}

/// Forward solve at the configured θ; writes `F u` (with optional noise),
/// the truth parameter file and optionally the full state.
pub fn simulate(
    setup: &Setup,
    noise: f64,
    seed: u64,
    full_state: bool,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    ensure!(
        noise >= 0.0 && noise.is_finite(),
        "noise level must be a nonnegative number"
    );
    let mut rng = rng_for(seed, false);
    let file = parameter_file(setup)?;
    let (theta, observed0) = starting_theta(setup, &mut rng, file.as_ref())?;
    let mut problem = setup.problem.clone();
    let (nq, nc, nt) = (
        problem.observation.n_observed(),
        problem.n_cells(),
        problem.time.nt(),
    );
    problem.data = LevelStack::new(nq, nc, vec![observed0.clone(); nt + 1])?;
    let u = solve_forward(&problem, &theta)?;
    let mut levels: Vec<Vec<f64>> = (0..=nt)
        .map(|n| problem.observation.observe(u.level(n), nc))
        .collect();
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise)?;
        for v in levels.iter_mut().flatten() {
            *v += normal.sample(&mut rng);
        }
    }
    let data = LevelStack::new(nq, nc, levels)?;

    let dir = prepare_output(setup)?;
    let dt = problem.time.dt();
    to_field_file(&problem.grid, dt, &data).save(dir.join(SIMULATED_FILE))?;
    fs::write(
        dir.join(TRUTH_FILE),
        format_theta(&problem, &theta, Some(&observed0)),
    )?;
    if full_state {
        to_field_file(&problem.grid, dt, &u).save(dir.join(STATE_FILE))?;
    }
    let min = u
        .levels()
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    writeln!(
        out,
        "simulated {} species on {} cells over {} steps; state min {min:e}; wrote {}",
        problem.network.n_species(),
        nc,
        nt,
        dir.join(SIMULATED_FILE).display()
    )?;
    Ok(Outcome::Success)
}

pub const GRADCHECK_HEADER: &str = "name,adjoint,finite_difference,relative_error,judged,pass";

/// Adjoint gradient against central differences, plus a Taylor remainder
/// fit. Mismatch when any judged row exceeds `threshold`.
pub fn gradcheck(
    setup: &Setup,
    threshold: f64,
    seed: u64,
    corrupt: bool,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    ensure!(setup.has_data, "gradcheck needs data; set [paths] data");
    let mut rng = rng_for(seed, true);
    let file = parameter_file(setup)?;
    let (theta, _) = starting_theta(setup, &mut rng, file.as_ref())?;
    // central differences of J need J far below the usual solver noise
    let mut problem = setup.problem.clone();
    let mut grad = gradient_settings(setup);
    let tight = CgSettings { rel_tol: CHECK_SOLVER_TOL, max_iter: None };
    problem.forward.picard_tol = CHECK_SOLVER_TOL;
    problem.forward.cg = tight;
    grad.adjoint.picard_tol = CHECK_SOLVER_TOL;
    grad.adjoint.cg = tight;
    let check = CheckSettings {
        seed,
        step: CHECK_STEP,
        ..CheckSettings::default()
    };
    let rows = gradient_check(&problem, &theta, &grad, &check, corrupt)?;

    let mut csv = String::from(GRADCHECK_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{},{}\n",
            r.name,
            r.adjoint,
            r.finite_difference,
            r.relative_error,
            !r.below_floor,
            r.passes(threshold)
        ));
    }
    let taylor = taylor_test(&problem, &theta, &grad, &TAYLOR_STEPS, seed)?;
    let mut tcsv = String::from("step,remainder,fitted\n");
    for p in &taylor.points {
        tcsv.push_str(&format!("{:e},{:e},{}\n", p.step, p.remainder, p.fitted));
    }
    match taylor.slope {
        Some(s) => tcsv.push_str(&format!("# slope = {s}\n")),
        None => tcsv.push_str("# slope = none\n"),
    }

    let dir = prepare_output(setup)?;
    fs::write(dir.join(GRADCHECK_FILE), &csv)?;
    fs::write(dir.join(TAYLOR_FILE), &tcsv)?;
    out.write_all(csv.as_bytes())?;
    let failed = rows.iter().filter(|r| !r.passes(threshold)).count();
    let worst = rows
        .iter()
        .filter(|r| !r.below_floor)
        .map(|r| r.relative_error)
        .fold(0.0, f64::max);
    match taylor.slope {
        Some(s) => log::info!("taylor remainder slope {s:.3}"),
        None => log::warn!("taylor remainder slope undetermined: too few points above round-off"),
    }
    log::info!(
        "{} rows, worst relative error {worst:e}, {failed} above {threshold:e}",
        rows.len()
    );
    Ok(if failed == 0 {
        Outcome::Success
    } else {
        Outcome::GradientMismatch
    })
}

/// Fits θ to the data. Writes θ*, the iteration log, the fitted observed
/// trajectory, and optionally the adjoint at θ*.
pub fn identify(
    setup: &Setup,
    seed: u64,
    dump_adjoint: bool,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    ensure!(setup.has_data, "identify needs data; set [paths] data");
    let mut rng = rng_for(seed, true);
    let file = parameter_file(setup)?;
    let (theta0, _) = starting_theta(setup, &mut rng, file.as_ref())?;
    let grad = gradient_settings(setup);
    let dir = prepare_output(setup)?;

    let mut log = BufWriter::new(File::create(dir.join(LOG_FILE))?);
    writeln!(log, "{}", IterationRecord::CSV_HEADER)?;
    let mut log_error = None;
    let started = Instant::now();
    let result = optimize(
        &setup.problem,
        &theta0,
        &setup.config.optimizer.settings,
        &grad,
        |rec| {
            log::info!(
                "iteration {:>4}  cost {:e}  projected gradient {:e}",
                rec.iteration,
                rec.cost,
                rec.projected_gradient
            );
            if let Err(e) = writeln!(log, "{}", rec.csv_row()).and_then(|_| log.flush()) {
                log_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_error {
        return Err(e).context("writing the iteration log");
    }

    let problem = &setup.problem;
    fs::write(
        dir.join(THETA_FILE),
        format_theta(problem, &result.theta, None),
    )?;
    let u = solve_forward(problem, &result.theta)?;
    let nc = problem.n_cells();
    let fitted = LevelStack::new(
        problem.observation.n_observed(),
        nc,
        (0..u.n_levels())
            .map(|n| problem.observation.observe(u.level(n), nc))
            .collect(),
    )?;
    to_field_file(&problem.grid, problem.time.dt(), &fitted).save(dir.join(FITTED_FILE))?;
    if dump_adjoint {
        let zeta = solve_adjoint(problem, &result.theta, &u, &grad.adjoint)?;
        to_field_file(&problem.grid, problem.time.dt(), &zeta).save(dir.join(ADJOINT_FILE))?;
    }

    let initial = result.log.first().map_or(f64::NAN, |r| r.cost);
    writeln!(
        out,
        "status {:?} after {} iterations ({:.1} s): cost {initial:e} -> {:e}",
        result.status,
        result.log.len().saturating_sub(1),
        started.elapsed().as_secs_f64(),
        result.cost
    )?;
    Ok(match result.status {
        Status::Converged => Outcome::Success,
        Status::LineSearchFailure => {
            log::warn!("line search failed to decrease the cost; best point written");
            Outcome::Success
        }
        Status::IterationCap | Status::TimeLimit => Outcome::IterationCap,
    })
}

/// `x,y,value` rows of one plane, active cells only, at cell centres.
pub fn export_slice(file: &FieldFile, t: usize, field: usize) -> anyhow::Result<String> {
    if t >= file.nt_plus_1 || field >= file.n_fields {
        bail!(
            "slice t={t}, field={field} out of range ({} levels, {} fields)",
            file.nt_plus_1,
            file.n_fields
        );
    }
    let mut s = String::from("x,y,value\n");
    for (cell, v) in file.plane(t, field).iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let (x, y) = ((cell % file.nx) as f64 + 0.5, (cell / file.nx) as f64 + 0.5);
        s.push_str(&format!("{:e},{:e},{v:e}\n", x * file.hx, y * file.hy));
    }
    Ok(s)
}

/// Per level and field: integral over the active cells, min and max.
pub fn export_stats(file: &FieldFile) -> String {
    let mut s = String::from("level,time,field,integral,min,max\n");
    let area = file.hx * file.hy;
    for t in 0..file.nt_plus_1 {
        for f in 0..file.n_fields {
            let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for &v in file.plane(t, f).iter().filter(|v| !v.is_nan()) {
                sum += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            s.push_str(&format!(
                "{t},{:e},{f},{:e},{lo:e},{hi:e}\n",
                t as f64 * file.dt,
                sum * area
            ));
        }
    }
    s
}

/// Reads `t=<idx>,field=<idx>`.
pub fn parse_slice(spec: &str) -> anyhow::Result<(usize, usize)> {
    let (mut t, mut field) = (None, None);
    for part in spec.split(',') {
        let (k, v) = part
            .split_once('=')
            .with_context(|| format!("bad slice `{spec}`; expected t=<idx>,field=<idx>"))?;
        let v: usize = v
            .trim()
            .parse()
            .with_context(|| format!("bad index `{v}`"))?;
        match k.trim() {
            "t" => t = Some(v),
            "field" => field = Some(v),
            other => bail!("unknown slice key `{other}`"),
        }
    }
    Ok((t.context("slice needs t=<idx>")?, field.unwrap_or(0)))
}

pub fn export(
    path: &Path,
    slice: Option<&str>,
    stats: bool,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    let file = FieldFile::load(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(slice.is_some() || stats, "choose --slice or --stats");
    if let Some(spec) = slice {
        let (t, f) = parse_slice(spec)?;
        out.write_all(export_slice(&file, t, f)?.as_bytes())?;
    }
    if stats {
        out.write_all(export_stats(&file).as_bytes())?;
    }
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_spec() {
        assert_eq!(parse_slice("t=3,field=1").unwrap(), (3, 1));
        assert_eq!(parse_slice("t=0").unwrap(), (0, 0));
        assert!(parse_slice("field=1").is_err());
        assert!(parse_slice("t=x").is_err());
    }

    #[test]
    fn constant_plane_exports_constant_column() {
        let mut f = FieldFile::new(3, 2, 2, 1, 0.5, 0.25, 0.1);
        f.data.fill(0.75);
        f.plane_mut(1, 0)[4] = f64::NAN;
        let s = export_slice(&f, 1, 0).unwrap();
        let rows: Vec<&str> = s.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.ends_with(",7.5e-1")));
        assert!(export_slice(&f, 2, 0).is_err());
        let stats = export_stats(&f);
        let second: Vec<&str> = stats.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(second[3].parse::<f64>().unwrap(), 5.0 * 0.75 * 0.125);
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdident::{commands, load_setup, RunConfig};

#[derive(Parser)]
#[command(
    name = "rdident",
    version,
    about = "Parameter identification for reaction-diffusion networks"
)]
struct Cli {
    /// Progress messages on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides `[output] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the parsed config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network against the kinetics assumptions and print its certificates.
    Validate {
        /// Network file, or `bundled:three_protein` / `bundled:factin`.
        network: String,
    },
    /// Forward solve; writes the observed trajectory.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Standard deviation of i.i.d. Gaussian noise added to the output.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Also write every species.
        #[arg(long)]
        full_state: bool,
    },
    /// Compare adjoint gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5e-3)]
        threshold: f64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Fit parameters to the data.
    Identify {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the adjoint at the fitted parameters.
        #[arg(long)]
        dump_adjoint: bool,
    },
    /// CSV views of a field file.
    Export {
        file: PathBuf,
        /// `t=<level>,field=<index>`
        #[arg(long)]
        slice: Option<String>,
        /// Per-level integral, min and max.
        #[arg(long)]
        stats: bool,
    },
}

fn print_config(path: &PathBuf) -> anyhow::Result<rdident::Outcome> {
    print!("{}", RunConfig::load(path)?);
    Ok(rdident::Outcome::Success)
}

fn run(cli: Cli) -> anyhow::Result<rdident::Outcome> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let outcome = match cli.command {
        Command::Validate { network } => commands::validate(&network, &mut out)?,
        Command::Simulate {
            run,
            noise,
            full_state,
        } => {
            if run.print_config {
                return print_config(&run.config);
            }
            let setup = load_setup(&run.config)?;
            let seed = run.seed.unwrap_or(setup.config.output.seed);
            let full = full_state || setup.config.output.full_state;
            commands::simulate(&setup, noise, seed, full, &mut out)?
        }
        Command::Gradcheck {
            run,
            threshold,
            corrupt_gradient,
        } => {
            if run.print_config {
                return print_config(&run.config);
            }
            let setup = load_setup(&run.config)?;
            let seed = run.seed.unwrap_or(setup.config.output.seed);
            commands::gradcheck(&setup, threshold, seed, corrupt_gradient, &mut out)?
        }
        Command::Identify { run, dump_adjoint } => {
            if run.print_config {
                return print_config(&run.config);
            }
            let setup = load_setup(&run.config)?;
            let seed = run.seed.unwrap_or(setup.config.output.seed);
            commands::identify(
                &setup,
                seed,
                dump_adjoint || setup.config.output.dump_adjoint,
                &mut out,
            )?
        }
        Command::Export { file, slice, stats } => {
            commands::export(&file, slice.as_deref(), stats, &mut out)?
        }
    };
    out.flush()?;
    Ok(outcome)
}

fn main() -> ExitCode {
    // usage errors exit 1; clap's default 2 means a non-compliant network here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppde::app::{exit_code, run, Command, RunOptions};
use ppde::config::ExperimentConfig;
use ppde::error::{Error, Result};

/// Monte Carlo solver and checks for semilinear path-dependent PDEs.
#[derive(Parser, Debug)]
#[command(name = "ppde", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment file (TOML, or JSON when it starts with '{').
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config entry, e.g. --set run.seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for path simulation.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the result here instead of run.output_path or stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Allow a user-supplied value function in `control`.
    #[arg(long)]
    unsafe_u: bool,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Simulate the diffusion and report terminal statistics.
    Simulate(Common),
    /// Solve the mild equation at the start point.
    Solve(Common),
    /// Feynman-Kac estimate for an affine nonlinearity.
    Fk(Common),
    /// Optimal liquidation checks.
    Control(Common),
    /// Test-function consistency checks.
    Viscosity(Common),
    /// Finite-difference derivative catalogue.
    CheckDerivs(Common),
    /// Sampled checks of the nonlinearity conditions.
    ValidateF(Common),
}

fn split(sub: Sub) -> (Command, Common) {
    match sub {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Fk(c) => (Command::Fk, c),
        Sub::Control(c) => (Command::Control, c),
        Sub::Viscosity(c) => (Command::Viscosity, c),
        Sub::CheckDerivs(c) => (Command::CheckDerivs, c),
        Sub::ValidateF(c) => (Command::ValidateF, c),
    }
}

fn io(what: &str, path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(format!("{what} {}: {e}", path.display()))
}

fn execute(cmd: Command, common: Common) -> Result<()> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| io("cannot read", &common.config, e))?;
    let cfg = ExperimentConfig::from_text(&text, &common.overrides)?;
    let opts = RunOptions {
        unsafe_u: common.unsafe_u,
    };
    let outcome = match common.threads {
        Some(0) => return Err(Error::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(|| run(cmd, &cfg, &opts))?,
        None => run(cmd, &cfg, &opts)?,
    };
    if let (Some(path), Some(csv)) = (&cfg.run.trajectories, &outcome.trajectories) {
        let path = PathBuf::from(path);
        std::fs::write(&path, csv).map_err(|e| io("cannot write", &path, e))?;
    }
    let text = outcome.primary_text(cfg.run.format);
    match common
        .output
        .or_else(|| cfg.run.output_path.as_ref().map(PathBuf::from))
    {
        Some(path) => std::fs::write(&path, text).map_err(|e| io("cannot write", &path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = split(cli.command);
    match execute(cmd, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ppde {cmd}: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

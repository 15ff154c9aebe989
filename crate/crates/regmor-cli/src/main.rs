//! `regmor`: offline registration and reduction, online prediction and
//! reporting for the synthetic manifolds.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regmor_cli::commands::{self, Context};
use regmor_cli::config::RunConfig;
use regmor_cli::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "regmor",
    version,
    about = "Registration-based model order reduction"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; defaults to `paths.out` or `./run`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accept bundles built from a different configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the mesh, parameter samples and nodal snapshots.
    Synth,
    /// Greedy registration of the training snapshots.
    Register,
    /// POD of the (registered) snapshots and coefficient regression.
    Reduce,
    /// Deformed meshes and fields for new parameters.
    Predict {
        /// Comma-separated parameter vector; repeatable.
        #[arg(long = "mu")]
        mu: Vec<String>,
        /// CSV file with one parameter vector per row.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Summary tables from a run directory.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Input("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("worker pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.paths.out.clone()))
        .unwrap_or_else(|| PathBuf::from("run"));

    if let Command::Report = cli.command {
        if !out.is_dir() {
            return Err(CliError::Input(format!(
                "run directory {} does not exist",
                out.display()
            )));
        }
        return commands::report(&out);
    }

    let mut config = config.ok_or_else(|| CliError::Input("this command needs --config".into()))?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
    let ctx = Context {
        config,
        out,
        force: cli.force,
    };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Register => commands::register(&ctx),
        Command::Reduce => commands::reduce(&ctx),
        Command::Predict { mu, params } => {
            let params = commands::parameters(&ctx, &mu, params.as_deref())?;
            commands::predict(&ctx, &params)
        }
        Command::Report => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

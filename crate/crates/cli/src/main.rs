use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kacwalk_cli::output::write_all;
use kacwalk_cli::{run, CliError, CliResult, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "kacwalk", version, about = "Kac walk collision statistics and Boltzmann control paths")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON experiment config; defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Collision rate per particle over independent replicas.
    Lln,
    /// Rate-function bounds over a grid of collision rates.
    Bounds,
    /// Maximize R4 over energy-e densities.
    Optimize,
    /// Cloning estimates of the cumulant generating function and its dual.
    Scgf,
    /// Particle relaxation towards the Maxwellian.
    Relax,
    /// Build a control path and evaluate its cost and residuals.
    Control,
    /// Fast consistency checks.
    Selftest,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Lln => Command::Lln,
            Cmd::Bounds => Command::Bounds,
            Cmd::Optimize => Command::Optimize,
            Cmd::Scgf => Command::Scgf,
            Cmd::Relax => Command::Relax,
            Cmd::Control => Command::Control,
            Cmd::Selftest => Command::Selftest,
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    if let Some(k) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let report = run(cli.command.into(), &cfg)?;
    let written = write_all(&cfg.out, &report.artifacts)?;
    if !cli.quiet {
        for line in &report.summary {
            println!("{line}");
        }
        println!("wrote {} file(s) under {}", written.len(), cfg.out.display());
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(report.failures.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kacwalk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

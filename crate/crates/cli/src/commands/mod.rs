use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output::{Artifact, Stamp};

mod control;
mod lln;
mod rates;
mod scgf;
mod selftest;

pub use control::{cmd_control, cmd_relax, RESIDUAL_FLOOR};
pub use lln::cmd_lln;
pub use rates::{cmd_bounds, cmd_optimize};
pub use scgf::cmd_scgf;
pub use selftest::cmd_selftest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Lln,
    Bounds,
    Optimize,
    Scgf,
    Relax,
    Control,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Lln => "lln",
            Command::Bounds => "bounds",
            Command::Optimize => "optimize",
            Command::Scgf => "scgf",
            Command::Relax => "relax",
            Command::Control => "control",
            Command::Selftest => "selftest",
        }
    }
}

/// What a command produced. `failures` lists checks that did not hold; outputs are still valid files.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<String>,
    pub failures: Vec<String>,
}

pub fn stamp(cmd: Command, cfg: &ExperimentConfig) -> Stamp {
    Stamp {
        command: cmd.name(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> CliResult<Report> {
    match cmd {
        Command::Lln => cmd_lln(cfg),
        Command::Bounds => cmd_bounds(cfg),
        Command::Optimize => cmd_optimize(cfg),
        Command::Scgf => cmd_scgf(cfg),
        Command::Relax => cmd_relax(cfg),
        Command::Control => cmd_control(cfg),
        Command::Selftest => cmd_selftest(cfg),
    }
}

pub mod calibrate;
pub mod decompose;
pub mod estimate;
pub mod montecarlo;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutDir;

pub fn run(command: Command, cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    match command {
        Command::Estimate => estimate::run(cfg, out),
        Command::Calibrate => calibrate::run(cfg, out),
        Command::Simulate => simulate::run(cfg, out),
        Command::Montecarlo => montecarlo::run(cfg, out),
        Command::Decompose => decompose::run(cfg, out),
        Command::Report => report::run(cfg, out),
    }
}

/// Files a command reads, in a fixed order.
pub fn inputs(command: Command, cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    match command {
        Command::Estimate | Command::Calibrate => Ok(vec![cfg.data.clone().expect("resolved config has data")]),
        Command::Simulate | Command::Montecarlo => Ok(Vec::new()),
        Command::Decompose => Ok(decompose::inputs(from_dir(cfg))),
        Command::Report => report::inputs(from_dir(cfg)),
    }
}

fn from_dir(cfg: &RunConfig) -> &Path {
    cfg.from.as_deref().expect("resolved config has from")
}

/// Refuses to write into the directory a command reads from.
pub fn check_out_dir(command: Command, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    if !matches!(command, Command::Decompose | Command::Report) {
        return Ok(());
    }
    let from = from_dir(cfg);
    let same = match (std::fs::canonicalize(from), std::fs::canonicalize(out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => from == out,
    };
    if same {
        return Err(CliError::Config(format!(
            "output directory '{}' is the input directory; choose another --out",
            out.display()
        )));
    }
    Ok(())
}

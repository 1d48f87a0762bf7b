//! Batch front end: every run resolves its configuration, writes a manifest
//! and then its results into one output directory.

// `!(x > y)` comparisons deliberately treat NaN as failing the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{output_dir, Command, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::output::OutDir;

pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Parser)]
#[command(
    name = "gdfm",
    version,
    about = "Distributed-lag estimation of the generalised dynamic factor model"
)]
pub struct Cli {
    /// Flat TOML file of settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $GDFM_OUT_DIR, then ./gdfm-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-series jobs and replications.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Full chain: ingest, factors, lag design, LASSO selection, OLS + HAC, decomposition.
    Estimate(EstimateArgs),
    /// Rolling-window penalty calibration only.
    Calibrate(CalibrateArgs),
    /// Draws a panel from a simulator preset.
    Simulate(SimulateArgs),
    /// Runs a Monte Carlo experiment.
    Montecarlo(MontecarloArgs),
    /// Recomputes the decomposition from an estimate output directory.
    Decompose(FromArgs),
    /// Tables and plot data from an estimate output directory.
    Report(ReportArgs),
    /// Re-runs the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// fredmd (transformation-code row) or plain.
    #[arg(long)]
    pub layout: Option<String>,
    /// Outlier rule: distance from the median in interquartile ranges.
    #[arg(long)]
    pub outlier_threshold: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Comma-separated series ids (default: all).
    #[arg(long, value_delimiter = ',')]
    pub series: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CalibrationArgs {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub calib_frac: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub grid_ratio: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Re-estimate the factors inside every window.
    #[arg(long)]
    pub reestimate_factors: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Penalty shared by every series.
    #[arg(long, conflicts_with = "calibrate_first")]
    pub lambda: Option<f64>,
    /// Calibrate a penalty per series before the final selection.
    #[arg(long)]
    pub calibrate_first: bool,
    /// Newey-West truncation lag: auto or a count.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// two-sided or one-sided.
    #[arg(long)]
    pub pvalue: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// benchmark, benchmark-lag0, benchmark-lagged or fred-like.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// plain, or fredmd to export integrated levels with transformation codes.
    #[arg(long)]
    pub layout: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct MontecarloArgs {
    /// coverage, rates, weak-test-size, weak-test-power or weak-share.
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Single (n, T) size replacing the preset grid; needs --T.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "T")]
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FromArgs {
    /// Output directory of an estimate run.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub from: FromArgs,
    /// Series to tabulate and plot (default: the two largest weak shares).
    #[arg(long, value_delimiter = ',')]
    pub series: Option<Vec<String>>,
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl IngestArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.data = self.data.clone();
        c.layout = self.layout.clone();
        c.outlier_threshold = self.outlier_threshold;
        c.r = self.r;
        c.p = self.p;
        c.series = self.series.clone();
    }
}

impl CalibrationArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.window = self.window;
        c.calib_frac = self.calib_frac;
        c.grid_size = self.grid_size;
        c.grid_ratio = self.grid_ratio;
        c.stride = self.stride;
        c.reestimate_factors = flag(self.reestimate_factors);
    }
}

impl CliCommand {
    /// The command and the settings given as flags.
    fn flags(&self) -> Option<(Command, RunConfig)> {
        let mut c = RunConfig::default();
        let command = match self {
            CliCommand::Estimate(a) => {
                a.ingest.apply(&mut c);
                a.calibration.apply(&mut c);
                c.lambda = a.lambda;
                c.calibrate_first = flag(a.calibrate_first);
                c.bandwidth = a.bandwidth.clone();
                c.pvalue = a.pvalue.clone();
                Command::Estimate
            }
            CliCommand::Calibrate(a) => {
                a.ingest.apply(&mut c);
                a.calibration.apply(&mut c);
                Command::Calibrate
            }
            CliCommand::Simulate(a) => {
                c.model = a.model.clone();
                c.n = a.n;
                c.t = a.t;
                c.seed = a.seed;
                c.burn_in = a.burn_in;
                c.layout = a.layout.clone();
                Command::Simulate
            }
            CliCommand::Montecarlo(a) => {
                c.experiment = a.experiment.clone();
                c.model = a.model.clone();
                c.replications = a.replications;
                c.seed = a.seed;
                c.burn_in = a.burn_in;
                c.n = a.n;
                c.t = a.t;
                Command::Montecarlo
            }
            CliCommand::Decompose(a) => {
                c.from = a.from.clone();
                Command::Decompose
            }
            CliCommand::Report(a) => {
                c.from = a.from.from.clone();
                c.series = a.series.clone();
                Command::Report
            }
            CliCommand::Rerun { .. } => return None,
        };
        Some((command, c))
    }
}

/// Resolves, records and executes one run.
pub fn run(cli: &Cli) -> CliResult<()> {
    let out_dir = output_dir(cli.out.clone());
    let (command, cfg) = match &cli.command {
        CliCommand::Rerun { manifest } => {
            let m = Manifest::read(manifest)?;
            if m.version != env!("CARGO_PKG_VERSION") {
                log::warn!("manifest was written by version {}", m.version);
            }
            m.verify_inputs()?;
            (m.command, m.run)
        }
        other => {
            let (command, flags) = other.flags().expect("not a rerun");
            let base = match &cli.config {
                Some(path) => RunConfig::from_file(path)?,
                None => RunConfig::default(),
            };
            (command, base.overlay(&flags))
        }
    };
    let cfg = cfg.resolve(command)?;
    commands::check_out_dir(command, &cfg, &out_dir)?;
    let inputs = commands::inputs(command, &cfg)?;

    let out = OutDir::create(&out_dir)?;
    let stale = out.join(ERROR_FILE);
    if stale.exists() {
        std::fs::remove_file(stale)?;
    }
    let mut manifest = Manifest::new(command, cfg.clone());
    for path in &inputs {
        manifest.add_input(path)?;
    }
    out.write_str(MANIFEST_FILE, &manifest.to_toml()?)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::run(command, &cfg, &out))
}

/// Writes the error record to stderr and, when possible, to the output
/// directory.
pub fn report_error(err: &CliError, out_dir: &Path) {
    let record = serde_json::to_string(&err.record()).expect("error record serializes");
    eprintln!("{record}");
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = std::fs::write(out_dir.join(ERROR_FILE), format!("{record}\n"));
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            report_error(&err, &output_dir(cli.out.clone()));
            err.exit_code()
        }
    }
}

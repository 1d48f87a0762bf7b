use gdfm::monte_carlo::{run_experiment, ExperimentConfig};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;

pub const EXPERIMENTS: [&str; 5] = ["coverage", "rates", "weak-test-size", "weak-test-power", "weak-share"];

/// Built-in experiment by name.
pub fn preset(name: &str) -> CliResult<ExperimentConfig> {
    match name {
        "coverage" => Ok(ExperimentConfig::coverage()),
        "rates" => Ok(ExperimentConfig::rates()),
        "weak-test-size" => Ok(ExperimentConfig::weak_test_size()),
        "weak-test-power" => Ok(ExperimentConfig::weak_test_power()),
        "weak-share" => Ok(ExperimentConfig::weak_share()),
        other => Err(CliError::Config(format!(
            "unknown experiment '{other}' (expected one of {})",
            EXPERIMENTS.join(", ")
        ))),
    }
}

/// The preset with the configured overrides applied.
pub fn experiment(cfg: &RunConfig) -> CliResult<ExperimentConfig> {
    let mut exp = preset(cfg.experiment.as_deref().unwrap_or_default())?;
    if let Some(m) = &cfg.model {
        exp.model = m.clone();
    }
    if let Some(k) = cfg.replications {
        exp.replications = k;
    }
    if let Some(s) = cfg.seed {
        exp.base_seed = s;
    }
    if let Some(b) = cfg.burn_in {
        exp.burn_in = b;
    }
    if let (Some(n), Some(t)) = (cfg.n, cfg.t) {
        exp.sizes = vec![(n, t)];
    }
    Ok(exp)
}

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let report = run_experiment(&experiment(cfg)?)?;
    out.write_with("summary.csv", |w| Ok(report.write_csv(w)?))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    out.write_str("summary.json", &(json + "\n"))
}

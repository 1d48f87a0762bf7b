//! Flat run configuration: a TOML file of top-level keys, overridden by
//! command-line flags, resolved into the complete set of settings a
//! command uses.

use std::path::{Path, PathBuf};

use gdfm::inference::{Bandwidth, PValueMode};
use gdfm::panel::Layout;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GDFM_OUT_DIR";
/// Output directory used when neither `--out` nor the environment sets one.
pub const DEFAULT_OUT_DIR: &str = "gdfm-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Estimate,
    Calibrate,
    Simulate,
    Montecarlo,
    Decompose,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Calibrate => "calibrate",
            Command::Simulate => "simulate",
            Command::Montecarlo => "montecarlo",
            Command::Decompose => "decompose",
            Command::Report => "report",
        }
    }

    /// Keys a command reads; everything else is dropped during resolution.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Estimate => &[
                "data",
                "layout",
                "outlier_threshold",
                "r",
                "p",
                "lambda",
                "calibrate_first",
                "window",
                "calib_frac",
                "grid_size",
                "grid_ratio",
                "stride",
                "reestimate_factors",
                "bandwidth",
                "pvalue",
                "series",
            ],
            Command::Calibrate => &[
                "data",
                "layout",
                "outlier_threshold",
                "r",
                "p",
                "window",
                "calib_frac",
                "grid_size",
                "grid_ratio",
                "stride",
                "reestimate_factors",
                "series",
            ],
            Command::Simulate => &["model", "n", "T", "seed", "burn_in", "layout"],
            Command::Montecarlo => &["experiment", "model", "replications", "seed", "burn_in", "n", "T"],
            Command::Decompose => &["from"],
            Command::Report => &["from", "series"],
        }
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every configurable key. Unset keys are omitted when serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrate_first: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calib_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reestimate_factors: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pvalue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

macro_rules! keep_only {
    ($cfg:ident, $keys:ident; $($f:ident => $k:literal),*) => {
        $( if !$keys.contains(&$k) && $cfg.$f.is_some() {
            log::warn!("ignoring key '{}' which the command does not use", $k);
            $cfg.$f = None;
        } )*
    };
}

impl RunConfig {
    /// Reads a flat TOML file. A file holding a `[run]` table (a manifest)
    /// is accepted as well and contributes that table.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config '{}': {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
        let flat = match table.get("run") {
            Some(toml::Value::Table(run)) => run.clone(),
            Some(_) => return Err(CliError::Config("'run' must be a table".into())),
            None => table,
        };
        if let Some((key, _)) = flat.iter().find(|(_, v)| v.is_table()) {
            return Err(CliError::Config(format!("config must be flat, but '{key}' is a table")));
        }
        toml::Value::Table(flat)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Values set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &RunConfig) -> Self {
        overlay!(self, other; data, layout, outlier_threshold, r, p, lambda, calibrate_first, window, calib_frac,
            grid_size, grid_ratio, stride, reestimate_factors, bandwidth, pvalue, series, model, n, t, seed,
            burn_in, experiment, replications, from);
        self
    }

    /// Drops keys the command ignores and fills defaults for the rest.
    pub fn resolve(mut self, command: Command) -> CliResult<Self> {
        let keys = command.keys();
        keep_only!(self, keys; data => "data", layout => "layout", outlier_threshold => "outlier_threshold",
            r => "r", p => "p", lambda => "lambda", calibrate_first => "calibrate_first", window => "window",
            calib_frac => "calib_frac", grid_size => "grid_size", grid_ratio => "grid_ratio", stride => "stride",
            reestimate_factors => "reestimate_factors", bandwidth => "bandwidth", pvalue => "pvalue",
            series => "series", model => "model", n => "n", t => "T", seed => "seed", burn_in => "burn_in",
            experiment => "experiment", replications => "replications", from => "from");
        match command {
            Command::Estimate | Command::Calibrate => {
                require(&self.data, "data")?;
                self.layout.get_or_insert_with(|| "fredmd".into());
                self.outlier_threshold.get_or_insert(10.0);
                self.r.get_or_insert(8);
                self.p.get_or_insert(24);
                let calibrating = command == Command::Calibrate || self.calibrate_first == Some(true);
                if command == Command::Estimate {
                    match (self.lambda, self.calibrate_first.unwrap_or(false)) {
                        (Some(_), true) => {
                            return Err(CliError::Config(
                                "give either lambda or calibrate_first, not both".into(),
                            ))
                        }
                        (None, false) => {
                            return Err(CliError::Config("estimate needs lambda or calibrate_first".into()))
                        }
                        _ => {}
                    }
                    self.calibrate_first.get_or_insert(false);
                    self.bandwidth.get_or_insert_with(|| "auto".into());
                    self.pvalue.get_or_insert_with(|| "two-sided".into());
                }
                if calibrating {
                    self.window.get_or_insert(488);
                    self.calib_frac.get_or_insert(0.8);
                    self.grid_size.get_or_insert(20);
                    self.grid_ratio.get_or_insert(0.01);
                    self.stride.get_or_insert(1);
                    self.reestimate_factors.get_or_insert(false);
                } else {
                    self.window = None;
                    self.calib_frac = None;
                    self.grid_size = None;
                    self.grid_ratio = None;
                    self.stride = None;
                    self.reestimate_factors = None;
                }
            }
            Command::Simulate => {
                let model = self.model.get_or_insert_with(|| "benchmark".into()).clone();
                let (n, t) = if model == "fred-like" { (120, 764) } else { (200, 1000) };
                self.n.get_or_insert(n);
                self.t.get_or_insert(t);
                self.seed.get_or_insert(1);
                self.burn_in.get_or_insert(gdfm::simulator::DEFAULT_BURN_IN);
                self.layout
                    .get_or_insert_with(|| if model == "fred-like" { "fredmd" } else { "plain" }.into());
            }
            Command::Montecarlo => {
                require(&self.experiment, "experiment")?;
                if self.n.is_some() != self.t.is_some() {
                    return Err(CliError::Config("n and T must be given together".into()));
                }
                let preset = crate::commands::montecarlo::preset(self.experiment.as_deref().unwrap_or_default())?;
                self.model.get_or_insert(preset.model);
                self.replications.get_or_insert(preset.replications);
                self.seed.get_or_insert(preset.base_seed);
                self.burn_in.get_or_insert(preset.burn_in);
            }
            Command::Decompose | Command::Report => {
                require(&self.from, "from")?;
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> CliResult<()> {
        if let Some(l) = &self.layout {
            l.parse::<Layout>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(b) = &self.bandwidth {
            b.parse::<Bandwidth>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(m) = &self.pvalue {
            m.parse::<PValueMode>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CliError::Config(format!(
                    "lambda must be finite and non-negative, got {l}"
                )));
            }
        }
        if let Some(t) = self.outlier_threshold {
            if !(t > 0.0) {
                return Err(CliError::Config(format!("outlier_threshold must be positive, got {t}")));
            }
        }
        if self.r == Some(0) {
            return Err(CliError::Config("r must be at least 1".into()));
        }
        if let Some(m) = &self.model {
            gdfm::simulator::preset(m).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.n == Some(0) || self.t == Some(0) || self.replications == Some(0) {
            return Err(CliError::Config("n, T and replications must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn layout(&self) -> Layout {
        self.layout
            .as_deref()
            .unwrap_or("plain")
            .parse()
            .expect("validated layout")
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
            .as_deref()
            .unwrap_or("auto")
            .parse()
            .expect("validated bandwidth")
    }

    pub fn pvalue(&self) -> PValueMode {
        self.pvalue
            .as_deref()
            .unwrap_or("two-sided")
            .parse()
            .expect("validated p-value mode")
    }
}

fn require<T>(value: &Option<T>, key: &str) -> CliResult<()> {
    if value.is_none() {
        return Err(CliError::Config(format!("missing required setting '{key}'")));
    }
    Ok(())
}

/// `--out`, then the environment, then the built-in default.
pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    })
    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig::from_toml_str("r = 4\np = 6\nlambda = 0.1\ndata = \"x.csv\"").unwrap();
        let flags = RunConfig {
            p: Some(12),
            ..Default::default()
        };
        let cfg = file.overlay(&flags).resolve(Command::Estimate).unwrap();
        assert_eq!((cfg.r, cfg.p), (Some(4), Some(12)));
        assert_eq!(cfg.bandwidth.as_deref(), Some("auto"));
    }

    #[test]
    fn unknown_keys_and_tables_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("rr = 1"), Err(CliError::Config(_))));
        assert!(matches!(
            RunConfig::from_toml_str("[x]\nr = 1"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn manifest_run_table_is_read() {
        let cfg = RunConfig::from_toml_str("version = \"1\"\n[run]\nmodel = \"benchmark\"\nseed = 3\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
    }

    #[test]
    fn estimate_needs_exactly_one_penalty_source() {
        let base = RunConfig {
            data: Some("d.csv".into()),
            ..Default::default()
        };
        assert!(base.clone().resolve(Command::Estimate).is_err());
        let both = RunConfig {
            lambda: Some(0.1),
            calibrate_first: Some(true),
            ..base.clone()
        };
        assert!(both.resolve(Command::Estimate).is_err());
    }

    #[test]
    fn irrelevant_keys_are_dropped() {
        let cfg = RunConfig {
            r: Some(3),
            seed: Some(9),
            ..Default::default()
        }
        .resolve(Command::Simulate)
        .unwrap();
        assert_eq!(cfg.r, None);
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.n, Some(200));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig {
            model: Some("fred-like".into()),
            ..Default::default()
        }
        .resolve(Command::Simulate)
        .unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn calibrated_estimate_defaults_to_the_monthly_macro_setup() {
        let cfg = RunConfig {
            data: Some("d.csv".into()),
            calibrate_first: Some(true),
            ..Default::default()
        }
        .resolve(Command::Estimate)
        .unwrap();
        assert_eq!((cfg.r, cfg.p, cfg.window), (Some(8), Some(24), Some(488)));
        assert_eq!(cfg.calib_frac, Some(0.8));
        assert_eq!(cfg.outlier_threshold, Some(10.0));
    }
}

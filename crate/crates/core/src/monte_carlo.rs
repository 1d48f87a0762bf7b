//! Monte Carlo experiments on the state-space simulator.
//!
//! The model of an experiment is realized once from `base_seed`; replication
//! `k` draws its paths with seed `base_seed + k`. Replications run in
//! parallel and are merged by index, so results do not depend on scheduling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::decomposition::{variance_shares, Decomposition};
use crate::eigen::principal_factors;
use crate::error::{GdfmError, Result};
use crate::inference::{infer, weak_factor_test, Bandwidth, PValueMode, WeakFactorOutcome};
use crate::lag_design::{apply_mask, build_lag_matrix};
use crate::simulator::{preset, simulate, RealizedModel, SimulatedPanel, DEFAULT_BURN_IN};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;
/// Normal quantile of the nominal 95% intervals.
pub const Z_95: f64 = 1.959963984540054;

/// What an experiment measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Interval coverage of the true distributed-lag coefficients.
    Coverage,
    /// `||K Lambda - I||` and common-component MSE along a size grid.
    Rates,
    /// Rejection rate of the weak-factor test.
    WeakTest,
    /// Recovery of weak-component variance shares.
    WeakShare,
}

impl std::str::FromStr for ExperimentKind {
    type Err = GdfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coverage" => Ok(ExperimentKind::Coverage),
            "rates" => Ok(ExperimentKind::Rates),
            "weak-test" => Ok(ExperimentKind::WeakTest),
            "weak-share" => Ok(ExperimentKind::WeakShare),
            other => Err(GdfmError::InvalidInput(format!(
                "unknown experiment '{other}' (expected coverage, rates, weak-test or weak-share)"
            ))),
        }
    }
}

/// Experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Simulator preset name.
    pub model: String,
    /// `(n, T)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub replications: usize,
    pub base_seed: u64,
    pub burn_in: usize,
    /// Test level of the weak-factor test.
    pub level: f64,
}

impl ExperimentConfig {
    pub fn coverage() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Coverage,
            model: "benchmark".into(),
            sizes: vec![(200, 1000)],
            replications: 500,
            base_seed: 1,
            burn_in: DEFAULT_BURN_IN,
            level: 0.05,
        }
    }

    pub fn rates() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Rates,
            sizes: vec![(50, 50), (100, 100), (200, 200), (400, 400)],
            replications: 100,
            ..Self::coverage()
        }
    }

    pub fn weak_test_size() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::WeakTest,
            model: "benchmark-lag0".into(),
            sizes: vec![(100, 1000)],
            replications: 1000,
            ..Self::coverage()
        }
    }

    pub fn weak_test_power() -> Self {
        ExperimentConfig {
            model: "benchmark-lagged".into(),
            ..Self::weak_test_size()
        }
    }

    pub fn weak_share() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::WeakShare,
            replications: 100,
            ..Self::coverage()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(GdfmError::InvalidInput("replications must be at least 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(GdfmError::InvalidInput("at least one (n, T) size is required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(GdfmError::InvalidInput("level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean and Monte Carlo standard error of one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub mc_se: f64,
    pub count: usize,
}

/// Aggregated metrics at one `(n, T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub t: usize,
    pub replications: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Population value of metrics that have one.
    pub targets: BTreeMap<String, f64>,
}

/// Result of a whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub sizes: Vec<SizeSummary>,
    /// Statistics combining several sizes.
    pub derived: BTreeMap<String, f64>,
}

type Metrics = Vec<(String, f64)>;

/// Estimation steps shared by all experiments: PCA on the demeaned panel,
/// lag-1 design restricted to the oracle mask, and OLS of every series.
struct Fit {
    k: DMatrix<f64>,
    y_eff: DMatrix<f64>,
    factors_eff: DMatrix<f64>,
    design: DMatrix<f64>,
    labels: Vec<crate::lag_design::ColumnLabel>,
}

fn fit(real: &RealizedModel, sim: &SimulatedPanel) -> Result<Fit> {
    let r = real.model.r;
    let p = 1;
    let mut y = sim.y.clone();
    for mut col in y.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let fe = principal_factors(&y, r)?;
    let basis = build_lag_matrix(&fe.factors, p)?;
    let sel = apply_mask(&basis, &real.truth.mask)?;
    let t_eff = basis.n_rows();
    Ok(Fit {
        k: fe.k,
        y_eff: y.rows(p, t_eff).into_owned(),
        factors_eff: basis.design.columns(0, r).into_owned(),
        design: sel.matrix,
        labels: sel.labels,
    })
}

/// OLS of every column of `y` on `x`.
fn ols_all(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = x.clone().qr();
    qr.r()
        .solve_upper_triangular(&qr.q().tr_mul(y))
        .ok_or_else(|| GdfmError::SingularGram("oracle design is singular in sample".into()))
}

fn coverage_metrics(real: &RealizedModel, f: &Fit) -> Result<Metrics> {
    let mut out = Vec::new();
    let series = if real.probes.is_empty() {
        &real.designated
    } else {
        &real.probes
    };
    for &i in series {
        let y = f.y_eff.column(i).into_owned();
        let res = infer(&f.design, &y, &f.labels, Bandwidth::Auto, PValueMode::TwoSided)?;
        let truth = &real.truth.coefficients[i];
        for (j, label) in f.labels.iter().enumerate() {
            let hit = ((res.beta_hat[j] - truth[j]).abs() <= Z_95 * res.se[j]) as u8 as f64;
            out.push((format!("coverage/{label}"), hit));
            out.push((format!("coverage/S{}/{label}", i + 1), hit));
        }
    }
    Ok(out)
}

fn rate_metrics(real: &RealizedModel, sim: &SimulatedPanel, f: &Fit) -> Result<Metrics> {
    let r = real.model.r;
    let lam = real.model.strong_loadings();
    let kl = (&f.k * lam - DMatrix::<f64>::identity(r, r)).norm();
    let beta = ols_all(&f.design, &f.y_eff)?;
    let chi_hat = &f.design * beta;
    let chi = sim.chi.rows(sim.n_obs() - chi_hat.nrows(), chi_hat.nrows());
    let mse = (chi_hat - chi).norm_squared() / (f.y_eff.nrows() * f.y_eff.ncols()) as f64;
    Ok(vec![("kl_norm".into(), kl), ("chi_mse".into(), mse)])
}

fn weak_test_metrics(real: &RealizedModel, f: &Fit, level: f64) -> Result<Metrics> {
    let mut out = Vec::new();
    for &i in &real.designated {
        let y = f.y_eff.column(i).into_owned();
        let res = infer(&f.design, &y, &f.labels, Bandwidth::Auto, PValueMode::TwoSided)?;
        match weak_factor_test(&res)? {
            WeakFactorOutcome::Tested(t) => {
                out.push(("reject".into(), (t.p_value < level) as u8 as f64));
                out.push(("statistic".into(), t.statistic));
            }
            WeakFactorOutcome::NoCandidates => {
                return Err(GdfmError::InvalidInput(
                    "the oracle mask has no lagged column to test".into(),
                ))
            }
        }
    }
    Ok(out)
}

fn weak_share_metrics(real: &RealizedModel, f: &Fit) -> Result<Metrics> {
    let cols = &real.designated;
    let y = f.y_eff.select_columns(cols);
    let beta = ols_all(&f.design, &y)?;
    let chi_hat = &f.design * beta;
    let decomp = Decomposition::assemble(y, f.factors_eff.clone(), chi_hat)?;
    let ids: Vec<String> = cols.iter().map(|i| format!("S{}", i + 1)).collect();
    let shares = variance_shares(&decomp, &ids)?;
    let mut out = Vec::new();
    for s in shares {
        out.push(("weak_share".to_string(), s.share_weak));
        out.push((format!("weak_share/{}", s.series), s.share_weak));
    }
    Ok(out)
}

fn replicate(cfg: &ExperimentConfig, real: &RealizedModel, t: usize, seed: u64) -> Result<Metrics> {
    let sim = simulate(&real.model, t, seed, cfg.burn_in)?;
    let f = fit(real, &sim)?;
    match cfg.kind {
        ExperimentKind::Coverage => coverage_metrics(real, &f),
        ExperimentKind::Rates => rate_metrics(real, &sim, &f),
        ExperimentKind::WeakTest => weak_test_metrics(real, &f, cfg.level),
        ExperimentKind::WeakShare => weak_share_metrics(real, &f),
    }
}

fn summarize(results: &[Metrics]) -> BTreeMap<String, MetricSummary> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rep in results {
        for (k, v) in rep {
            acc.entry(k.clone()).or_default().push(*v);
        }
    }
    acc.into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (
                k,
                MetricSummary {
                    mean,
                    mc_se: (var / n).sqrt(),
                    count: v.len(),
                },
            )
        })
        .collect()
}

fn population_targets(cfg: &ExperimentConfig, real: &RealizedModel) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if cfg.kind == ExperimentKind::WeakShare {
        let shares = real.model.population_variances()?.weak_shares();
        for &i in &real.designated {
            out.insert(format!("weak_share/S{}", i + 1), shares[i]);
        }
        let mean = real.designated.iter().map(|&i| shares[i]).sum::<f64>() / real.designated.len().max(1) as f64;
        out.insert("weak_share".into(), mean);
    }
    Ok(out)
}

/// Runs every replication at one size.
pub fn run_size(cfg: &ExperimentConfig, n: usize, t: usize) -> Result<SizeSummary> {
    let spec = preset(&cfg.model)?;
    let real = spec.realize(n, cfg.base_seed)?;
    let outcomes: Vec<Result<Metrics>> = (0..cfg.replications)
        .into_par_iter()
        .map(|k| replicate(cfg, &real, t, cfg.base_seed.wrapping_add(k as u64)))
        .collect();
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = 0usize;
    let mut first = None;
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(m) => ok.push(m),
            Err(e) => {
                failed += 1;
                log::warn!("replication {k} failed: {e}");
                first.get_or_insert_with(|| format!("replication {k}: {e}"));
            }
        }
    }
    if failed as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
        return Err(GdfmError::ReplicationFailures {
            failed,
            total: cfg.replications,
            first: first.unwrap_or_default(),
        });
    }
    Ok(SizeSummary {
        n,
        t,
        replications: cfg.replications,
        failed,
        metrics: summarize(&ok),
        targets: population_targets(cfg, &real)?,
    })
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs an experiment over all of its sizes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sizes = cfg
        .sizes
        .iter()
        .map(|&(n, t)| run_size(cfg, n, t))
        .collect::<Result<Vec<_>>>()?;
    let mut derived = BTreeMap::new();
    if cfg.kind == ExperimentKind::Rates && sizes.len() >= 2 {
        let x: Vec<f64> = sizes.iter().map(|s| (s.n.min(s.t) as f64).powf(-0.5)).collect();
        let y: Vec<f64> = sizes.iter().map(|s| s.metrics["kl_norm"].mean).collect();
        derived.insert("kl_norm_slope".into(), log_log_slope(&x, &y));
        let mse = |n: usize| {
            sizes
                .iter()
                .find(|s| s.n == n && s.t == n)
                .map(|s| s.metrics["chi_mse"].mean)
        };
        if let (Some(a), Some(b)) = (mse(100), mse(400)) {
            derived.insert("chi_mse_ratio_400_100".into(), b / a);
        }
    }
    if cfg.kind == ExperimentKind::Coverage {
        for s in &sizes {
            let pooled = s
                .metrics
                .iter()
                .filter(|(k, _)| k.matches('/').count() == 1)
                .map(|(_, m)| m.mean);
            let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            derived.insert(format!("coverage_min/{}x{}", s.n, s.t), lo);
            derived.insert(format!("coverage_max/{}x{}", s.n, s.t), hi);
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        sizes,
        derived,
    })
}

impl ExperimentReport {
    /// Tidy CSV with columns `n,T,metric,mean,mc_se,count,target`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "T", "metric", "mean", "mc_se", "count", "target"])?;
        for s in &self.sizes {
            for (k, m) in &s.metrics {
                w.write_record([
                    s.n.to_string(),
                    s.t.to_string(),
                    k.clone(),
                    m.mean.to_string(),
                    m.mc_se.to_string(),
                    m.count.to_string(),
                    s.targets.get(k).map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn metric(&self, size: usize, name: &str) -> Option<&MetricSummary> {
        self.sizes.get(size).and_then(|s| s.metrics.get(name))
    }
}

/// Convenience for tests and the CLI: truth and one simulated panel.
pub fn realize_and_simulate(model: &str, n: usize, t: usize, seed: u64) -> Result<(RealizedModel, SimulatedPanel)> {
    let real = preset(model)?.realize(n, seed)?;
    let sim = simulate(&real.model, t, seed, DEFAULT_BURN_IN)?;
    Ok((real, sim))
}

/// Per-series true coefficients as `label -> value` for reporting.
pub fn truth_table(real: &RealizedModel, series: usize) -> Vec<(String, f64)> {
    let beta: &DVector<f64> = &real.truth.coefficients[series];
    real.truth
        .labels
        .iter()
        .map(|l| l.to_string())
        .zip(beta.iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replication_summary_is_the_run() {
        let cfg = ExperimentConfig {
            sizes: vec![(30, 120)],
            replications: 1,
            ..ExperimentConfig::rates()
        };
        let report = run_experiment(&cfg).unwrap();
        let real = preset("benchmark").unwrap().realize(30, 1).unwrap();
        let direct = replicate(&cfg, &real, 120, 1).unwrap();
        for (k, v) in direct {
            let m = report.metric(0, &k).unwrap();
            assert_eq!(m.mean, v);
            assert_eq!(m.mc_se, 0.0);
        }
    }

    #[test]
    fn replications_merge_deterministically() {
        let cfg = ExperimentConfig {
            sizes: vec![(30, 150)],
            replications: 6,
            ..ExperimentConfig::weak_share()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.8)).collect();
        assert!((log_log_slope(&x, &y) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_replications_rejected() {
        let cfg = ExperimentConfig {
            replications: 0,
            ..ExperimentConfig::coverage()
        };
        assert!(run_experiment(&cfg).is_err());
    }
}

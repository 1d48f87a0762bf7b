//! Coefficient tables and tidy plot data from an `estimate` output
//! directory: per-window selections, weak-variance shares and the
//! dynamic/static component paths of highlighted series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gdfm::inference::TABLE_HEADER;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{file_stem, OutDir};
use crate::pipeline::read_matrix_csv;

const REQUIRED: [&str; 6] = [
    "coefficients.csv",
    "shares.csv",
    "weak_test.csv",
    "standardized.csv",
    "dynamic.csv",
    "static.csv",
];
/// Series highlighted when none are requested.
const DEFAULT_HIGHLIGHTS: usize = 2;

pub fn inputs(from: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = REQUIRED.iter().map(|f| from.join(f)).collect();
    let incidence = from.join("calibration").join("incidence");
    if incidence.is_dir() {
        let mut extra: Vec<PathBuf> = std::fs::read_dir(&incidence)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        extra.sort();
        files.extend(extra);
    }
    Ok(files)
}

fn read_records(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("cannot read '{}': {e}", path.display())))?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Data(format!("'{}' has no column '{name}'", path.display())))
}

fn number(s: &str, path: &Path) -> CliResult<f64> {
    s.parse()
        .map_err(|_| CliError::Data(format!("'{}' holds a non-numeric value '{s}'", path.display())))
}

#[derive(Debug, Serialize)]
struct Summary {
    series: usize,
    mean_share_weak: f64,
    max_share_weak: f64,
    max_share_weak_series: String,
    mean_basis_size: f64,
    weak_test_rejections_5pct: usize,
    weak_test_tested: usize,
    highlighted: Vec<String>,
}

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let from = cfg.from.as_deref().expect("resolved from");

    let shares_path = from.join("shares.csv");
    let (h, rows) = read_records(&shares_path)?;
    let (c_series, c_weak) = (
        column(&h, "series", &shares_path)?,
        column(&h, "share_weak", &shares_path)?,
    );
    let mut shares: Vec<(String, f64)> = rows
        .iter()
        .map(|r| Ok((r[c_series].clone(), number(&r[c_weak], &shares_path)?)))
        .collect::<CliResult<_>>()?;
    if shares.is_empty() {
        return Err(CliError::Data("shares.csv lists no series".into()));
    }
    shares.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let highlighted: Vec<String> = match &cfg.series {
        Some(s) => {
            for id in s {
                if !shares.iter().any(|(k, _)| k == id) {
                    return Err(CliError::Config(format!("unknown series '{id}'")));
                }
            }
            s.clone()
        }
        None => shares.iter().take(DEFAULT_HIGHLIGHTS).map(|(k, _)| k.clone()).collect(),
    };

    out.write_with("figure2_weak_shares.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["rank", "series", "share_weak"])?;
        for (k, (id, v)) in shares.iter().enumerate() {
            csv.write_record([(k + 1).to_string(), id.clone(), v.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let coef_path = from.join("coefficients.csv");
    let (h, coef_rows) = read_records(&coef_path)?;
    if h.len() != 7 || h[0] != "series" || h[1] != "term" {
        return Err(CliError::Data(
            "coefficients.csv does not have the series,term,<table> layout".into(),
        ));
    }
    let mut by_series: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
    for r in &coef_rows {
        by_series.entry(r[0].as_str()).or_default().push(r);
    }
    let mut md = String::new();
    for id in &highlighted {
        let rows = by_series
            .get(id.as_str())
            .ok_or_else(|| CliError::Data(format!("no coefficients for '{id}'")))?;
        out.write_with(&format!("table_{}.csv", file_stem(id)), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(TABLE_HEADER)?;
            for r in rows {
                csv.write_record(&r[1..])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        writeln!(md, "## {id}\n").expect("string write");
        writeln!(md, "| | Estimate | Std. error | t value | Pr(>\\|t\\|) | |").expect("string write");
        writeln!(md, "|---|---:|---:|---:|---:|---|").expect("string write");
        for r in rows {
            let v: Vec<f64> = r[2..6]
                .iter()
                .map(|s| number(s, &coef_path))
                .collect::<CliResult<_>>()?;
            writeln!(
                md,
                "| {} | {:.7} | {:.7} | {:.7} | {:.6e} | {} |",
                r[1], v[0], v[1], v[2], v[3], r[6]
            )
            .expect("string write");
        }
        md.push('\n');
    }
    out.write_str("tables.md", &md)?;

    let panel = read_matrix_csv(&from.join("standardized.csv"))?;
    let dynamic = read_matrix_csv(&from.join("dynamic.csv"))?;
    let stat = read_matrix_csv(&from.join("static.csv"))?;
    for id in &highlighted {
        let (Some(py), Some(pd), Some(ps)) = (
            panel.series_position(id),
            dynamic.series_position(id),
            stat.series_position(id),
        ) else {
            return Err(CliError::Data(format!(
                "series '{id}' is missing from the component files"
            )));
        };
        let offset = panel
            .n_obs()
            .checked_sub(dynamic.n_obs())
            .ok_or_else(|| CliError::Data("dynamic component is longer than the standardized panel".into()))?;
        out.write_with(&format!("figure3_{}.csv", file_stem(id)), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["time", "y", "dynamic", "static"])?;
            for t in 0..dynamic.n_obs() {
                csv.write_record([
                    dynamic.time_index()[t].clone(),
                    panel.values()[(t + offset, py)].to_string(),
                    dynamic.values()[(t, pd)].to_string(),
                    stat.values()[(t, ps)].to_string(),
                ])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        let incidence = from
            .join("calibration")
            .join("incidence")
            .join(format!("{}.csv", file_stem(id)));
        if incidence.exists() {
            let (h, rows) = read_records(&incidence)?;
            out.write_with(&format!("figure1_{}.csv", file_stem(id)), |w| {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(["window_target", "term"])?;
                for r in &rows {
                    for (term, flag) in h[1..].iter().zip(&r[1..]) {
                        if flag == "1" {
                            csv.write_record([r[0].as_str(), term.as_str()])?;
                        }
                    }
                }
                csv.flush()?;
                Ok(())
            })?;
        }
    }

    let weak_path = from.join("weak_test.csv");
    let (h, weak_rows) = read_records(&weak_path)?;
    let c_p = column(&h, "p_value", &weak_path)?;
    let tested: Vec<f64> = weak_rows
        .iter()
        .filter(|r| r[c_p] != "NA")
        .map(|r| number(&r[c_p], &weak_path))
        .collect::<CliResult<_>>()?;
    let n = shares.len() as f64;
    let summary = Summary {
        series: shares.len(),
        mean_share_weak: shares.iter().map(|s| s.1).sum::<f64>() / n,
        max_share_weak: shares[0].1,
        max_share_weak_series: shares[0].0.clone(),
        mean_basis_size: coef_rows.len() as f64 / by_series.len().max(1) as f64,
        weak_test_rejections_5pct: tested.iter().filter(|&&p| p < 0.05).count(),
        weak_test_tested: tested.len(),
        highlighted,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    out.write_str("summary.json", &(json + "\n"))
}

//! Shared stages of the estimation commands: ingestion, calibration, final
//! selection, inference and the decomposition with its CSV outputs.

use std::path::Path;

use gdfm::decomposition::{variance_shares, write_part_csv, write_shares_csv, Decomposition, ShareRow};
use gdfm::eigen::{extract_factors, FactorEstimate};
use gdfm::inference::{infer, weak_factor_test, Bandwidth, InferenceResult, PValueMode, WeakFactorOutcome};
use gdfm::lag_design::{apply_mask, build_lag_matrix, LagBasis, DEFAULT_RANK_TOL};
use gdfm::lasso::{
    final_select_many, CalibrationResult, CalibrationSettings, FinalSelection, LassoOptions, RollingCalibrator,
};
use gdfm::panel::{apply_tcodes, clean_outliers, load_csv, standardize, trim_missing, Layout, OutlierReport, Panel};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{file_stem, OutDir};

/// Panel after transformation, trimming and outlier cleaning.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub clean: Panel<f64>,
    pub standardized: Panel<f64>,
    pub outliers: OutlierReport,
}

pub fn prepare(data: &Path, layout: Layout, outlier_threshold: f64) -> CliResult<Prepared> {
    let loaded = load_csv::<f64>(data, layout)?;
    if !loaded.rejected_rows.is_empty() {
        log::warn!("dropped {} rows with unparseable dates", loaded.rejected_rows.len());
    }
    let transformed = apply_tcodes(&loaded.panel, &loaded.meta)?;
    let trimmed = trim_missing(&transformed)?;
    let (clean, outliers) = clean_outliers(&trimmed, outlier_threshold)?;
    let standardized = standardize(&clean)?;
    Ok(Prepared {
        clean,
        standardized,
        outliers,
    })
}

/// Column positions of the requested series, or every series.
pub fn series_indices(panel: &Panel<f64>, names: Option<&[String]>) -> CliResult<Vec<usize>> {
    match names {
        None => Ok((0..panel.n_series()).collect()),
        Some(names) => names
            .iter()
            .map(|s| {
                panel
                    .series_position(s)
                    .ok_or_else(|| CliError::Config(format!("unknown series '{s}'")))
            })
            .collect(),
    }
}

pub fn calibration_settings(cfg: &RunConfig) -> CalibrationSettings {
    CalibrationSettings {
        r: cfg.r.unwrap_or(8),
        p: cfg.p.unwrap_or(24),
        window: cfg.window.unwrap_or(488),
        calib_frac: cfg.calib_frac.unwrap_or(0.8),
        stride: cfg.stride.unwrap_or(1),
        reestimate_factors: cfg.reestimate_factors.unwrap_or(false),
        lasso: LassoOptions::default(),
    }
}

/// Rolling-window calibration of the listed series, each on its own grid
/// descending from its calibration-sample `lambda_max`.
pub fn calibrate(prepared: &Prepared, indices: &[usize], cfg: &RunConfig) -> CliResult<Vec<CalibrationResult<f64>>> {
    let calibrator = RollingCalibrator::new(&prepared.clean, calibration_settings(cfg))?;
    let (size, ratio) = (cfg.grid_size.unwrap_or(20), cfg.grid_ratio.unwrap_or(0.01));
    let grids = indices
        .par_iter()
        .map(|&i| calibrator.default_grid(i, size, ratio))
        .collect::<gdfm::Result<Vec<_>>>()?;
    Ok(calibrator.calibrate_many(indices, &grids)?)
}

/// `calibration.csv` plus the per-series penalty paths and window incidence.
pub fn write_calibration(out: &OutDir, results: &[CalibrationResult<f64>]) -> CliResult<()> {
    out.write_with("calibration.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "series",
            "optimal_lambda",
            "optimal_index",
            "mse",
            "grid_size",
            "windows",
            "monotonicity_violations",
        ])?;
        for r in results {
            csv.write_record([
                r.series.clone(),
                r.optimal_penalty.to_string(),
                r.optimal_index.to_string(),
                r.mse_per_penalty[r.optimal_index].to_string(),
                r.penalty_grid.len().to_string(),
                r.window_targets.len().to_string(),
                r.monotonicity_violations.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    for r in results {
        let stem = file_stem(&r.series);
        out.write_with(&format!("calibration/paths/{stem}.csv"), |w| Ok(r.write_path_csv(w)?))?;
        out.write_with(&format!("calibration/incidence/{stem}.csv"), |w| {
            Ok(r.write_incidence_csv(w)?)
        })?;
    }
    Ok(())
}

/// Final fit of one series.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub id: String,
    pub lambda: f64,
    pub selection: FinalSelection<f64>,
    pub inference: InferenceResult<f64>,
    pub weak_test: WeakFactorOutcome,
}

#[derive(Debug, Clone)]
pub struct Estimation {
    pub factors: FactorEstimate<f64>,
    pub basis: LagBasis<f64>,
    pub fits: Vec<SeriesFit>,
    /// `T_eff × k` fitted dynamic component of the estimated series.
    pub chi: DMatrix<f64>,
    /// `T_eff × k` standardized responses.
    pub y: DMatrix<f64>,
}

/// Whole-sample factors, LASSO selection at the given penalties, then OLS
/// with HAC inference on each selected basis.
pub fn estimate(
    standardized: &Panel<f64>,
    indices: &[usize],
    penalties: &[f64],
    r: usize,
    p: usize,
    bandwidth: Bandwidth,
    mode: PValueMode,
) -> CliResult<Estimation> {
    let factors = extract_factors(standardized, r)?;
    let basis = build_lag_matrix(&factors.factors, p)?;
    let t_eff = basis.n_rows();
    let y = standardized.values().rows(p, t_eff).select_columns(indices);
    let selections = final_select_many(&basis, &y, penalties, &LassoOptions::default(), DEFAULT_RANK_TOL)?;
    let fits = selections
        .into_par_iter()
        .enumerate()
        .map(|(q, selection)| -> CliResult<SeriesFit> {
            let design = apply_mask(&basis, &selection.mask)?;
            let response = y.column(q).into_owned();
            let inference = infer(&design.matrix, &response, &design.labels, bandwidth, mode)?;
            let weak_test = weak_factor_test(&inference)?;
            Ok(SeriesFit {
                id: standardized.series_ids()[indices[q]].clone(),
                lambda: penalties[q],
                selection,
                inference,
                weak_test,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut chi = DMatrix::zeros(t_eff, indices.len());
    for (q, fit) in fits.iter().enumerate() {
        let design = basis.design.select_columns(&fit.selection.mask.indices());
        chi.set_column(q, &(design * &fit.inference.beta_hat));
    }
    Ok(Estimation {
        factors,
        basis,
        fits,
        chi,
        y,
    })
}

/// Decomposes the fitted dynamic component and writes every part, the
/// static loadings, the variance shares and the identity checks.
pub fn write_decomposition(
    out: &OutDir,
    y: DMatrix<f64>,
    factors: DMatrix<f64>,
    chi: DMatrix<f64>,
    ids: &[String],
    times: &[String],
) -> CliResult<(Decomposition<f64>, Vec<ShareRow>)> {
    let decomp = Decomposition::assemble(y, factors, chi)?;
    let shares = variance_shares(&decomp, ids)?;
    let parts = [
        ("dynamic.csv", &decomp.chi_hat),
        ("static.csv", &decomp.c_hat),
        ("weak.csv", &decomp.e_chi_hat),
        ("idiosyncratic.csv", &decomp.xi_hat),
    ];
    for (name, part) in parts {
        out.write_with(name, |w| Ok(write_part_csv(part, ids, times, w)?))?;
    }
    out.write_with("static_loadings.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let r = decomp.loadings.ncols();
        csv.write_record(std::iter::once("series".to_string()).chain((1..=r).map(|j| format!("F{j}"))))?;
        for (i, id) in ids.iter().enumerate() {
            csv.write_record(std::iter::once(id.clone()).chain(decomp.loadings.row(i).iter().map(|v| v.to_string())))?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_with("shares.csv", |w| Ok(write_shares_csv(&shares, w)?))?;
    let orth = decomp.orthogonality();
    out.write_with("decomposition_check.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "additivity_error", "max_orthogonality"])?;
        for (i, id) in ids.iter().enumerate() {
            let add = (0..decomp.n_obs())
                .map(|t| {
                    (decomp.c_hat[(t, i)] + decomp.e_chi_hat[(t, i)] + decomp.xi_hat[(t, i)] - decomp.y[(t, i)]).abs()
                })
                .fold(0.0, f64::max);
            let o = orth.row(i).amax();
            csv.write_record([id.clone(), add.to_string(), o.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok((decomp, shares))
}

/// Reads a `time,<ids>` CSV written by this tool.
pub fn read_matrix_csv(path: &Path) -> CliResult<Panel<f64>> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing input file '{}'", path.display())));
    }
    let loaded = load_csv::<f64>(path, Layout::Plain)?;
    if !loaded.rejected_rows.is_empty() {
        return Err(CliError::Data(format!(
            "'{}' has rows with unreadable time stamps: {:?}",
            path.display(),
            loaded.rejected_rows
        )));
    }
    Ok(loaded.panel)
}

use gdfm::decomposition::write_part_csv;
use gdfm::inference::{t_table, write_table_csv, WeakFactorOutcome, TABLE_HEADER};
use gdfm::lag_design::lag_labels;
use gdfm::panel::write_csv;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{file_stem, OutDir};
use crate::pipeline::{self, Estimation};

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let (r, p) = (cfg.r.expect("resolved r"), cfg.p.expect("resolved p"));
    let prepared = pipeline::prepare(
        cfg.data.as_deref().expect("resolved data"),
        cfg.layout(),
        cfg.outlier_threshold.expect("resolved threshold"),
    )?;
    out.write_with("imputations.csv", |w| Ok(prepared.outliers.write_csv(w)?))?;
    out.write_with("standardized.csv", |w| Ok(write_csv(&prepared.standardized, None, w)?))?;
    let indices = pipeline::series_indices(&prepared.standardized, cfg.series.as_deref())?;

    let penalties: Vec<f64> = if cfg.calibrate_first == Some(true) {
        let results = pipeline::calibrate(&prepared, &indices, cfg)?;
        pipeline::write_calibration(out, &results)?;
        results.iter().map(|c| c.optimal_penalty).collect()
    } else {
        vec![cfg.lambda.expect("resolved lambda"); indices.len()]
    };

    let est = pipeline::estimate(
        &prepared.standardized,
        &indices,
        &penalties,
        r,
        p,
        cfg.bandwidth(),
        cfg.pvalue(),
    )?;
    write_factors(out, &est, prepared.standardized.time_index())?;
    write_selection(out, &est, r, p)?;
    write_inference(out, &est)?;

    let ids: Vec<String> = est.fits.iter().map(|f| f.id.clone()).collect();
    let times = &prepared.standardized.time_index()[p..];
    let factors = est.basis.design.columns(0, r).into_owned();
    pipeline::write_decomposition(out, est.y, factors, est.chi, &ids, times)?;
    Ok(())
}

fn write_factors(out: &OutDir, est: &Estimation, times: &[String]) -> CliResult<()> {
    let r = est.factors.r();
    let names: Vec<String> = (1..=r).map(|j| format!("F{j}")).collect();
    out.write_with("factors.csv", |w| {
        Ok(write_part_csv(&est.factors.factors, &names, times, w)?)
    })?;
    out.write_with("eigenvalues.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["factor", "eigenvalue"])?;
        for (name, v) in names.iter().zip(est.factors.eigenvalues.iter()) {
            csv.write_record([name.clone(), v.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn write_selection(out: &OutDir, est: &Estimation, r: usize, p: usize) -> CliResult<()> {
    let labels = lag_labels(r, p);
    out.write_with("selection.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "lambda", "lasso_active", "selected", "dropped"])?;
        for f in &est.fits {
            let dropped: Vec<String> = f.selection.dropped.iter().map(|&c| labels[c].to_string()).collect();
            csv.write_record([
                f.id.clone(),
                f.lambda.to_string(),
                f.selection.fit.active_set.len().to_string(),
                f.selection.mask.count().to_string(),
                dropped.join(" "),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_with("masks.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(std::iter::once("series".to_string()).chain(labels.iter().map(ToString::to_string)))?;
        for f in &est.fits {
            let row = f.selection.mask.as_slice().iter().map(|&s| u8::from(s).to_string());
            csv.write_record(std::iter::once(f.id.clone()).chain(row))?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn write_inference(out: &OutDir, est: &Estimation) -> CliResult<()> {
    for f in &est.fits {
        let rows = t_table(&f.inference);
        out.write_with(&format!("coefficients/{}.csv", file_stem(&f.id)), |w| {
            Ok(write_table_csv(&rows, w)?)
        })?;
    }
    out.write_with("coefficients.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "term"].into_iter().chain(TABLE_HEADER[1..].iter().copied()))?;
        for f in &est.fits {
            for row in t_table(&f.inference) {
                csv.write_record([
                    f.id.clone(),
                    row.label,
                    row.estimate.to_string(),
                    row.std_error.to_string(),
                    row.t_value.to_string(),
                    row.p_value.to_string(),
                    row.stars.to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_with("weak_test.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "statistic", "dof", "p_value", "bandwidth", "n_obs"])?;
        for f in &est.fits {
            let (stat, dof, pv) = match &f.weak_test {
                WeakFactorOutcome::Tested(t) => (t.statistic.to_string(), t.dof.to_string(), t.p_value.to_string()),
                WeakFactorOutcome::NoCandidates => ("NA".into(), "0".into(), "NA".into()),
            };
            csv.write_record([
                f.id.clone(),
                stat,
                dof,
                pv,
                f.inference.bandwidth.to_string(),
                f.inference.n_obs.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

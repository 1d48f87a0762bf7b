use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::OutDir;
use crate::pipeline;

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let prepared = pipeline::prepare(
        cfg.data.as_deref().expect("resolved data"),
        cfg.layout(),
        cfg.outlier_threshold.expect("resolved threshold"),
    )?;
    out.write_with("imputations.csv", |w| Ok(prepared.outliers.write_csv(w)?))?;
    let indices = pipeline::series_indices(&prepared.standardized, cfg.series.as_deref())?;
    let results = pipeline::calibrate(&prepared, &indices, cfg)?;
    pipeline::write_calibration(out, &results)
}

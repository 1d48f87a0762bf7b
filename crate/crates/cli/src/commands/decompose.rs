//! Recomputes the decomposition from the standardized panel, the factors
//! and the dynamic component written by `estimate`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::pipeline::{read_matrix_csv, write_decomposition};

pub const INPUTS: [&str; 3] = ["standardized.csv", "factors.csv", "dynamic.csv"];

pub fn inputs(from: &Path) -> Vec<PathBuf> {
    INPUTS.iter().map(|f| from.join(f)).collect()
}

/// Rows of `m` whose time stamps are the trailing `times`.
fn tail_rows(m: &gdfm::Panel<f64>, times: &[String], what: &str) -> CliResult<DMatrix<f64>> {
    let t = m.n_obs();
    if times.len() > t || m.time_index()[t - times.len()..] != *times {
        return Err(CliError::Data(format!(
            "{what} is not aligned with the dynamic component"
        )));
    }
    Ok(m.values().rows(t - times.len(), times.len()).into_owned())
}

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let from = cfg.from.as_deref().expect("resolved from");
    let [panel, factors, chi] = [0, 1, 2].map(|k| read_matrix_csv(&from.join(INPUTS[k])));
    let (panel, factors, chi) = (panel?, factors?, chi?);
    let times = chi.time_index().to_vec();
    let ids = chi.series_ids().to_vec();
    let columns = ids
        .iter()
        .map(|id| {
            panel
                .series_position(id)
                .ok_or_else(|| CliError::Data(format!("series '{id}' missing from the standardized panel")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let y = tail_rows(&panel, &times, "standardized panel")?.select_columns(&columns);
    let f = tail_rows(&factors, &times, "factor file")?;
    write_decomposition(out, y, f, chi.into_values(), &ids, &times)?;
    Ok(())
}

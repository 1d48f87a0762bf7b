//! Panel ingestion and preparation: CSV loading, stationarity transforms,
//! outlier cleaning and standardization.
//!
//! A [`Panel`] stores a `T × n` matrix with time in rows and series in
//! columns. Missing observations are represented as `NaN` until
//! [`trim_missing`] has produced a complete, balanced panel.

use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GdfmError, Result};
use crate::scalar::Scalar;

/// Time-series panel with rows indexed by time and columns by series.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T: Scalar> {
    values: DMatrix<T>,
    series_ids: Vec<String>,
    time_index: Vec<String>,
    standardized: bool,
    means: DVector<T>,
    sds: DVector<T>,
}

impl<T: Scalar> Panel<T> {
    /// Builds a raw (not standardized) panel.
    pub fn new(values: DMatrix<T>, series_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        let (t, n) = values.shape();
        if t < 2 || n < 1 {
            return Err(GdfmError::Structure(format!(
                "a panel needs at least 2 rows and 1 column, got {t}x{n}"
            )));
        }
        if series_ids.len() != n {
            return Err(GdfmError::Structure(format!(
                "{} series ids for {n} columns",
                series_ids.len()
            )));
        }
        if time_index.len() != t {
            return Err(GdfmError::Structure(format!(
                "{} time stamps for {t} rows",
                time_index.len()
            )));
        }
        Ok(Self {
            values,
            series_ids,
            time_index,
            standardized: false,
            means: DVector::zeros(n),
            sds: DVector::from_element(n, T::one()),
        })
    }

    /// Builds a panel with generated labels `S1..Sn` and integer time ticks.
    pub fn from_matrix(values: DMatrix<T>) -> Result<Self> {
        let (t, n) = values.shape();
        let ids = (1..=n).map(|i| format!("S{i}")).collect();
        let ticks = (1..=t).map(|i| i.to_string()).collect();
        Self::new(values, ids, ticks)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Means removed by standardization (zeros for a raw panel).
    pub fn means(&self) -> &DVector<T> {
        &self.means
    }

    /// Scale factors removed by standardization (ones for a raw panel).
    pub fn sds(&self) -> &DVector<T> {
        &self.sds
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }

    /// Position of a series by id.
    pub fn series_position(&self, id: &str) -> Option<usize> {
        self.series_ids.iter().position(|s| s == id)
    }

    /// Contiguous block of rows `[start, end)`. The affine transform record is
    /// carried over unchanged.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_obs() || end - start < 2 {
            return Err(GdfmError::InvalidInput(format!(
                "row range {start}..{end} invalid for a panel with {} rows",
                self.n_obs()
            )));
        }
        Ok(Self {
            values: self.values.rows(start, end - start).into_owned(),
            series_ids: self.series_ids.clone(),
            time_index: self.time_index[start..end].to_vec(),
            standardized: self.standardized,
            means: self.means.clone(),
            sds: self.sds.clone(),
        })
    }

    /// Panel restricted to the listed columns, in the given order.
    pub fn select_series(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() || columns.iter().any(|&c| c >= self.n_series()) {
            return Err(GdfmError::InvalidInput("invalid series selection".into()));
        }
        Ok(Self {
            values: self.values.select_columns(columns),
            series_ids: columns.iter().map(|&c| self.series_ids[c].clone()).collect(),
            time_index: self.time_index.clone(),
            standardized: self.standardized,
            means: DVector::from_iterator(columns.len(), columns.iter().map(|&c| self.means[c])),
            sds: DVector::from_iterator(columns.len(), columns.iter().map(|&c| self.sds[c])),
        })
    }

    fn with_values(&self, values: DMatrix<T>, time_index: Vec<String>) -> Self {
        Self {
            values,
            series_ids: self.series_ids.clone(),
            time_index,
            standardized: self.standardized,
            means: self.means.clone(),
            sds: self.sds.clone(),
        }
    }
}

/// FRED-MD style transformation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TCode {
    Level = 1,
    Diff = 2,
    Diff2 = 3,
    Log = 4,
    LogDiff = 5,
    LogDiff2 = 6,
    PctChangeDiff = 7,
}

impl TCode {
    pub fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            1 => TCode::Level,
            2 => TCode::Diff,
            3 => TCode::Diff2,
            4 => TCode::Log,
            5 => TCode::LogDiff,
            6 => TCode::LogDiff2,
            7 => TCode::PctChangeDiff,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Number of leading observations consumed by the transform.
    pub fn order(self) -> usize {
        match self {
            TCode::Level | TCode::Log => 0,
            TCode::Diff | TCode::LogDiff => 1,
            TCode::Diff2 | TCode::LogDiff2 | TCode::PctChangeDiff => 2,
        }
    }

    fn uses_log(self) -> bool {
        matches!(self, TCode::Log | TCode::LogDiff | TCode::LogDiff2)
    }
}

impl fmt::Display for TCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Per-series metadata read alongside the panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub name: String,
    pub tcode: TCode,
}

/// CSV layout accepted by [`load_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Header of series ids, a row of tcodes, then one row per period.
    Fredmd,
    /// Header of series ids followed by data rows; every tcode is 1.
    Plain,
}

impl std::str::FromStr for Layout {
    type Err = GdfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fredmd" | "fred-md" => Ok(Layout::Fredmd),
            "plain" => Ok(Layout::Plain),
            other => Err(GdfmError::InvalidInput(format!("unknown layout '{other}'"))),
        }
    }
}

/// Result of reading a panel file.
#[derive(Debug, Clone)]
pub struct LoadedPanel<T: Scalar> {
    pub panel: Panel<T>,
    pub meta: Vec<SeriesMeta>,
    /// 1-based file lines dropped because their date could not be parsed.
    pub rejected_rows: Vec<usize>,
}

/// Reads a panel CSV from disk.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, layout: Layout) -> Result<LoadedPanel<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, layout)
}

/// Reads a panel CSV. The first column holds the date or integer tick, the
/// remaining columns one series each. Empty cells and `NA`/`NaN` are missing.
pub fn read_csv<T: Scalar, R: Read>(reader: R, layout: Layout) -> Result<LoadedPanel<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(GdfmError::Structure("empty file".into())),
    };
    let width = header.len();
    if width < 2 {
        return Err(GdfmError::Structure(
            "header needs a time column and at least one series".into(),
        ));
    }
    let series_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = series_ids.len();
    let mut line = 1usize;

    let tcodes = match layout {
        Layout::Plain => vec![TCode::Level; n],
        Layout::Fredmd => {
            line += 1;
            let rec = match records.next() {
                Some(rec) => rec?,
                None => return Err(GdfmError::Structure("missing tcode row".into())),
            };
            if rec.len() != width {
                return Err(GdfmError::Structure(format!(
                    "line {line} has {} fields, expected {width}",
                    rec.len()
                )));
            }
            rec.iter()
                .enumerate()
                .skip(1)
                .map(|(col, cell)| {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0)
                        .and_then(|v| TCode::from_code(v as i64))
                        .ok_or_else(|| GdfmError::Parse {
                            row: line,
                            column: col + 1,
                            message: format!("invalid tcode '{cell}'"),
                        })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let mut time_index = Vec::new();
    let mut data: Vec<T> = Vec::new();
    let mut rejected_rows = Vec::new();
    for rec in records {
        line += 1;
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != width {
            return Err(GdfmError::Structure(format!(
                "line {line} has {} fields, expected {width}",
                rec.len()
            )));
        }
        let stamp = &rec[0];
        if !is_valid_time_stamp(stamp) {
            rejected_rows.push(line);
            continue;
        }
        time_index.push(stamp.to_string());
        for (col, cell) in rec.iter().enumerate().skip(1) {
            data.push(parse_cell(cell).ok_or_else(|| GdfmError::Parse {
                row: line,
                column: col + 1,
                message: format!("cannot parse '{cell}' as a number"),
            })?);
        }
    }
    if !rejected_rows.is_empty() {
        log::warn!("rejected {} rows with unparseable dates", rejected_rows.len());
    }
    let t = time_index.len();
    let values = DMatrix::from_row_slice(t, n, &data);
    let meta = series_ids
        .iter()
        .zip(tcodes)
        .map(|(name, tcode)| SeriesMeta {
            name: name.clone(),
            tcode,
        })
        .collect();
    Ok(LoadedPanel {
        panel: Panel::new(values, series_ids, time_index)?,
        meta,
        rejected_rows,
    })
}

fn parse_cell<T: Scalar>(cell: &str) -> Option<T> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") || cell == "." {
        return Some(T::lit(f64::NAN));
    }
    let v: f64 = cell.parse().ok()?;
    if v.is_infinite() {
        return None;
    }
    T::from_f64(v)
}

/// Accepts integer ticks, `YYYY-MM-DD`, `YYYY-MM`, `YYYY/MM`, `YYYY/MM/DD`
/// and the `M/D/YYYY` form used by FRED-MD.
fn is_valid_time_stamp(s: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return true;
    }
    let parts: Vec<&str> = s.split(['-', '/']).collect();
    let nums: Option<Vec<u32>> = parts
        .iter()
        .map(|p| {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                None
            } else {
                p.parse().ok()
            }
        })
        .collect();
    let Some(nums) = nums else { return false };
    let month_ok = |m: u32| (1..=12).contains(&m);
    let day_ok = |d: u32| (1..=31).contains(&d);
    match (parts[0].len(), nums.as_slice()) {
        (4, [_, m]) => month_ok(*m),
        (4, [_, m, d]) => month_ok(*m) && day_ok(*d),
        (1 | 2, [m, d, y]) if parts[2].len() == 4 => month_ok(*m) && day_ok(*d) && *y > 0,
        _ => false,
    }
}

/// Applies each series' transformation code. Leading rows lost to
/// differencing are dropped for all series so the panel stays rectangular.
pub fn apply_tcodes<T: Scalar>(panel: &Panel<T>, meta: &[SeriesMeta]) -> Result<Panel<T>> {
    if meta.len() != panel.n_series() {
        return Err(GdfmError::InvalidInput(format!(
            "{} metadata entries for {} series",
            meta.len(),
            panel.n_series()
        )));
    }
    let drop = meta.iter().map(|m| m.tcode.order()).max().unwrap_or(0);
    let t = panel.n_obs();
    if t < drop + 2 {
        return Err(GdfmError::Structure(format!(
            "{t} rows are too few for differencing of order {drop}"
        )));
    }
    let out_rows = t - drop;
    let mut out = DMatrix::zeros(out_rows, panel.n_series());
    for (j, m) in meta.iter().enumerate() {
        let col = panel.values.column(j);
        let first_used = drop - m.tcode.order();
        let base: Vec<T> = if m.tcode.uses_log() {
            col.iter()
                .enumerate()
                .map(|(row, &v)| {
                    if row >= first_used && v.is_finite() && v <= T::zero() {
                        Err(GdfmError::Domain {
                            series: panel.series_ids[j].clone(),
                            row,
                            message: format!("log of non-positive value {v} at {}", panel.time_index[row]),
                        })
                    } else {
                        Ok(v.ln())
                    }
                })
                .collect::<Result<_>>()?
        } else {
            col.iter().copied().collect()
        };
        for k in 0..out_rows {
            let s = k + drop;
            out[(k, j)] = match m.tcode {
                TCode::Level | TCode::Log => base[s],
                TCode::Diff | TCode::LogDiff => base[s] - base[s - 1],
                TCode::Diff2 | TCode::LogDiff2 => base[s] - base[s - 1] * T::lit(2.0) + base[s - 2],
                TCode::PctChangeDiff => {
                    for row in [s - 1, s - 2] {
                        if base[row] == T::zero() {
                            return Err(GdfmError::Domain {
                                series: panel.series_ids[j].clone(),
                                row,
                                message: "division by zero in percent change".into(),
                            });
                        }
                    }
                    (base[s] / base[s - 1] - T::one()) - (base[s - 1] / base[s - 2] - T::one())
                }
            };
        }
    }
    Ok(panel.with_values(out, panel.time_index[drop..].to_vec()))
}

/// Drops leading and trailing rows containing missing values. Missing values
/// strictly inside the retained block are an error.
pub fn trim_missing<T: Scalar>(panel: &Panel<T>) -> Result<Panel<T>> {
    let complete = |row: usize| panel.values.row(row).iter().all(|v| v.is_finite());
    let t = panel.n_obs();
    let first = (0..t).find(|&r| complete(r));
    let last = (0..t).rev().find(|&r| complete(r));
    let (Some(first), Some(last)) = (first, last) else {
        return Err(GdfmError::Structure("no complete rows in panel".into()));
    };
    for row in first..=last {
        if let Some(j) = panel.values.row(row).iter().position(|v| !v.is_finite()) {
            return Err(GdfmError::Structure(format!(
                "interior missing value in series '{}' at {}",
                panel.series_ids[j], panel.time_index[row]
            )));
        }
    }
    panel.slice_rows(first, last + 1)
}

/// One outlier replacement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Imputation {
    pub series: String,
    pub time: String,
    pub original_value: f64,
}

/// Record of the outlier cleaning pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OutlierReport {
    pub imputations: Vec<Imputation>,
    /// Series whose interquartile range was zero.
    pub degenerate: Vec<String>,
}

impl OutlierReport {
    /// Writes the imputations as CSV with columns `series,time,original_value`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series", "time", "original_value"])?;
        for imp in &self.imputations {
            w.write_record([imp.series.as_str(), imp.time.as_str(), &imp.original_value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replaces observations deviating from the series median by more than
/// `threshold_iqr` interquartile ranges with the mean of the remaining
/// observations. Detection is repeated until no exceedance is left, so the
/// operation is idempotent.
///
/// A zero interquartile range marks the series as degenerate; the rule is
/// still evaluated literally, so only values different from the median are
/// replaced and a constant series is left untouched.
pub fn clean_outliers<T: Scalar>(panel: &Panel<T>, threshold_iqr: f64) -> Result<(Panel<T>, OutlierReport)> {
    if !(threshold_iqr > 0.0) || !threshold_iqr.is_finite() {
        return Err(GdfmError::InvalidInput(format!(
            "outlier threshold must be positive, got {threshold_iqr}"
        )));
    }
    if panel.standardized {
        return Err(GdfmError::InvalidInput(
            "outlier cleaning expects a panel that is not yet standardized".into(),
        ));
    }
    if panel.has_missing() {
        return Err(GdfmError::InvalidInput(
            "outlier cleaning needs a complete panel".into(),
        ));
    }
    let threshold = T::lit(threshold_iqr);
    let mut values = panel.values.clone();
    let mut report = OutlierReport::default();
    for j in 0..panel.n_series() {
        let mut col: Vec<T> = values.column(j).iter().copied().collect();
        let mut replaced = vec![false; col.len()];
        let mut first_pass = true;
        loop {
            let (median, iqr) = median_iqr(&col);
            if first_pass && iqr == T::zero() {
                report.degenerate.push(panel.series_ids[j].clone());
            }
            first_pass = false;
            let flagged: Vec<bool> = col.iter().map(|&x| (x - median).abs() > threshold * iqr).collect();
            let inliers: Vec<T> = col.iter().zip(&flagged).filter(|(_, &f)| !f).map(|(&x, _)| x).collect();
            if inliers.len() == col.len() || inliers.is_empty() {
                break;
            }
            let fill = inliers.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(inliers.len());
            for (row, &f) in flagged.iter().enumerate() {
                if f {
                    if !replaced[row] {
                        replaced[row] = true;
                        report.imputations.push(Imputation {
                            series: panel.series_ids[j].clone(),
                            time: panel.time_index[row].clone(),
                            original_value: panel.values[(row, j)].as_f64(),
                        });
                    }
                    col[row] = fill;
                }
            }
        }
        for (row, v) in col.into_iter().enumerate() {
            values[(row, j)] = v;
        }
    }
    Ok((panel.with_values(values, panel.time_index.clone()), report))
}

/// Median and interquartile range with linear interpolation between order
/// statistics.
fn median_iqr<T: Scalar>(xs: &[T]) -> (T, T) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = T::lit(pos - lo as f64);
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    (q(0.5), q(0.75) - q(0.25))
}

/// Centres each column and scales it to unit variance (denominator `T`).
/// The transform is recorded so that [`unstandardize`] inverts it; calling
/// this on an already standardized panel composes the transforms.
pub fn standardize<T: Scalar>(panel: &Panel<T>) -> Result<Panel<T>> {
    if panel.has_missing() {
        return Err(GdfmError::InvalidInput(
            "cannot standardize a panel with missing values".into(),
        ));
    }
    let t = T::from_count(panel.n_obs());
    let mut values = panel.values.clone();
    let mut means = panel.means.clone();
    let mut sds = panel.sds.clone();
    for j in 0..panel.n_series() {
        let mut col = values.column_mut(j);
        let mean = col.sum() / t;
        let var = col
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .fold(T::zero(), |a, b| a + b)
            / t;
        let sd = var.sqrt();
        let scale = col.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        if !(sd > scale * T::eps() * T::lit(16.0)) {
            return Err(GdfmError::ZeroVariance {
                series: panel.series_ids[j].clone(),
            });
        }
        col.iter_mut().for_each(|x| *x = (*x - mean) / sd);
        means[j] += sds[j] * mean;
        sds[j] *= sd;
    }
    Ok(Panel {
        values,
        series_ids: panel.series_ids.clone(),
        time_index: panel.time_index.clone(),
        standardized: true,
        means,
        sds,
    })
}

/// Undoes [`standardize`], returning a raw panel on the original scale.
pub fn unstandardize<T: Scalar>(panel: &Panel<T>) -> Panel<T> {
    let mut values = panel.values.clone();
    for j in 0..panel.n_series() {
        let (m, s) = (panel.means[j], panel.sds[j]);
        values.column_mut(j).iter_mut().for_each(|x| *x = *x * s + m);
    }
    Panel {
        values,
        series_ids: panel.series_ids.clone(),
        time_index: panel.time_index.clone(),
        standardized: false,
        means: DVector::zeros(panel.n_series()),
        sds: DVector::from_element(panel.n_series(), T::one()),
    }
}

/// Writes the panel in the plain CSV layout (or the FRED-MD layout when
/// transformation codes are supplied).
pub fn write_csv<T: Scalar, W: std::io::Write>(panel: &Panel<T>, tcodes: Option<&[TCode]>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(panel.series_ids.iter().cloned());
    w.write_record(&header)?;
    if let Some(codes) = tcodes {
        if codes.len() != panel.n_series() {
            return Err(GdfmError::InvalidInput("tcode count does not match the panel".into()));
        }
        let mut row = vec!["Transform:".to_string()];
        row.extend(codes.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    for (t, stamp) in panel.time_index.iter().enumerate() {
        let mut row = vec![stamp.clone()];
        row.extend(panel.values.row(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col_panel(xs: &[f64]) -> Panel<f64> {
        Panel::from_matrix(DMatrix::from_column_slice(xs.len(), 1, xs)).unwrap()
    }

    #[test]
    fn plain_layout_reads_all_level_codes() {
        let csv = "date,a,b\n1,1.0,2.0\n2,3.0,4.0\n3,5.0,6.0\n";
        let loaded = read_csv::<f64, _>(csv.as_bytes(), Layout::Plain).unwrap();
        assert_eq!(loaded.panel.n_obs(), 3);
        assert_eq!(loaded.panel.n_series(), 2);
        assert!(loaded.meta.iter().all(|m| m.tcode == TCode::Level));
        assert_eq!(loaded.panel.values()[(2, 1)], 6.0);
    }

    #[test]
    fn fredmd_layout_reads_tcodes() {
        let csv = "sasdate,a,b\nTransform:,1,5\n1/1/1960,1,2\n2/1/1960,2,3\n";
        let loaded = read_csv::<f64, _>(csv.as_bytes(), Layout::Fredmd).unwrap();
        let codes: Vec<u8> = loaded.meta.iter().map(|m| m.tcode.code()).collect();
        assert_eq!(codes, vec![1, 5]);
        assert_eq!(loaded.panel.time_index()[1], "2/1/1960");
    }

    #[test]
    fn malformed_cell_reports_location() {
        let csv = "date,a,b\n1,1.0,2.0\n2,oops,4.0\n";
        match read_csv::<f64, _>(csv.as_bytes(), Layout::Plain) {
            Err(GdfmError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_structural_error() {
        let csv = "date,a,b\n1,1.0,2.0\n2,4.0\n";
        assert!(matches!(
            read_csv::<f64, _>(csv.as_bytes(), Layout::Plain),
            Err(GdfmError::Structure(_))
        ));
    }

    #[test]
    fn unparseable_dates_are_rejected() {
        let csv = "date,a\n2000-01,1\nnot a date,2\n2000-03,3\n2000-04,4\n";
        let loaded = read_csv::<f64, _>(csv.as_bytes(), Layout::Plain).unwrap();
        assert_eq!(loaded.panel.n_obs(), 3);
        assert_eq!(loaded.rejected_rows, vec![3]);
    }

    #[test]
    fn level_code_is_identity() {
        let p = col_panel(&[3.0, -1.0, 2.5]);
        let meta = [SeriesMeta {
            name: "S1".into(),
            tcode: TCode::Level,
        }];
        assert_eq!(apply_tcodes(&p, &meta).unwrap().values(), p.values());
    }

    #[test]
    fn log_difference_of_exponentials() {
        let e = std::f64::consts::E;
        let p = col_panel(&[1.0, e, e * e]);
        let meta = [SeriesMeta {
            name: "S1".into(),
            tcode: TCode::LogDiff,
        }];
        let out = apply_tcodes(&p, &meta).unwrap();
        assert_eq!(out.n_obs(), 2);
        assert!((out.values()[0] - 1.0).abs() < 1e-12);
        assert!((out.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_difference() {
        let p = col_panel(&[3.0, 5.0, 9.0]);
        let meta = [SeriesMeta {
            name: "S1".into(),
            tcode: TCode::Diff,
        }];
        let out = apply_tcodes(&p, &meta).unwrap();
        assert_eq!(out.values().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn mixed_orders_drop_rows_uniformly() {
        let vals = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 4.0, 8.0, 1.0, 1.0, 2.0, 3.0]);
        let p = Panel::from_matrix(vals).unwrap();
        let meta = [
            SeriesMeta {
                name: "a".into(),
                tcode: TCode::Level,
            },
            SeriesMeta {
                name: "b".into(),
                tcode: TCode::Diff2,
            },
        ];
        let out = apply_tcodes(&p, &meta).unwrap();
        assert_eq!(out.n_obs(), 2);
        assert_eq!(out.values().column(0).as_slice(), &[4.0, 8.0]);
        assert_eq!(out.values().column(1).as_slice(), &[1.0, 0.0]);
        assert_eq!(out.time_index(), &["3".to_string(), "4".to_string()]);
    }

    #[test]
    fn pct_change_difference() {
        let p = col_panel(&[1.0, 2.0, 3.0, 6.0]);
        let meta = [SeriesMeta {
            name: "a".into(),
            tcode: TCode::PctChangeDiff,
        }];
        let out = apply_tcodes(&p, &meta).unwrap();
        assert!((out.values()[0] - (0.5 - 1.0)).abs() < 1e-15);
        assert!((out.values()[1] - (1.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn log_of_non_positive_names_series_and_row() {
        let p = col_panel(&[1.0, 0.0, 2.0]);
        let meta = [SeriesMeta {
            name: "S1".into(),
            tcode: TCode::Log,
        }];
        match apply_tcodes(&p, &meta) {
            Err(GdfmError::Domain { series, row, .. }) => {
                assert_eq!(series, "S1");
                assert_eq!(row, 1);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn trimming_head_and_tail_missing() {
        let nan = f64::NAN;
        let vals = DMatrix::from_column_slice(5, 2, &[nan, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, nan]);
        let out = trim_missing(&Panel::from_matrix(vals).unwrap()).unwrap();
        assert_eq!(out.n_obs(), 3);
        assert!(!out.has_missing());
    }

    #[test]
    fn interior_missing_is_error() {
        let nan = f64::NAN;
        let vals = DMatrix::from_column_slice(4, 1, &[1.0, nan, 2.0, 3.0]);
        assert!(trim_missing(&Panel::from_matrix(vals).unwrap()).is_err());
    }

    #[test]
    fn spike_in_zero_iqr_series_is_imputed() {
        let p = col_panel(&[0.0, 0.0, 0.0, 0.0, 100.0]);
        let (out, report) = clean_outliers(&p, 10.0).unwrap();
        assert_eq!(out.values()[4], 0.0);
        assert_eq!(report.imputations.len(), 1);
        assert_eq!(report.imputations[0].original_value, 100.0);
        assert_eq!(report.degenerate, vec!["S1".to_string()]);
    }

    #[test]
    fn no_exceedance_leaves_panel_unchanged() {
        let p = col_panel(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (out, report) = clean_outliers(&p, 10.0).unwrap();
        assert_eq!(out, p);
        assert!(report.imputations.is_empty());
    }

    #[test]
    fn constant_series_is_degenerate() {
        let p = col_panel(&[2.0; 6]);
        let (out, report) = clean_outliers(&p, 10.0).unwrap();
        assert_eq!(out, p);
        assert!(report.imputations.is_empty());
        assert_eq!(report.degenerate.len(), 1);
    }

    #[test]
    fn imputation_uses_inlier_mean() {
        // median 3, IQR 2: 1000 deviates by far more than 10 IQR
        let p = col_panel(&[1.0, 2.0, 3.0, 4.0, 5.0, 1000.0, 3.0]);
        let (out, report) = clean_outliers(&p, 10.0).unwrap();
        assert_eq!(report.imputations.len(), 1);
        assert!((out.values()[5] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_two_points() {
        let p = col_panel(&[1.0, 3.0]);
        let s = standardize(&p).unwrap();
        assert_eq!(s.values().as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.means()[0], 2.0);
        assert_eq!(s.sds()[0], 1.0);
    }

    #[test]
    fn standardize_is_idempotent() {
        let p = col_panel(&[0.3, -1.2, 4.0, 2.2, 0.0]);
        let s1 = standardize(&p).unwrap();
        let s2 = standardize(&s1).unwrap();
        for (a, b) in s1.values().iter().zip(s2.values().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let back = unstandardize(&s2);
        for (a, b) in back.values().iter().zip(p.values().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_cannot_be_standardized() {
        let p = col_panel(&[4.0, 4.0, 4.0]);
        assert!(matches!(standardize(&p), Err(GdfmError::ZeroVariance { .. })));
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let vals = DMatrix::from_row_slice(3, 2, &[1.5, 2.0, -3.25, 4.0, 5.0, 6.125]);
        let p = Panel::from_matrix(vals).unwrap();
        let mut buf = Vec::new();
        write_csv(&p, Some(&[TCode::Level, TCode::Diff]), &mut buf).unwrap();
        let loaded = read_csv::<f64, _>(buf.as_slice(), Layout::Fredmd).unwrap();
        assert_eq!(loaded.panel.values(), p.values());
        assert_eq!(loaded.meta[1].tcode, TCode::Diff);
    }
}

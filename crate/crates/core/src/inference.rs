//! OLS estimation of the distributed-lag regression with HAC standard errors.
//!
//! For a selected design `X` (rows `t = p+1..T`) and response `y`,
//! `sqrt(T_eff)(b_hat - b)` is asymptotically normal with variance
//! `Gx^{-1} Gxe Gx^{-1}`, where `Gx = X'X/T_eff` and `Gxe` is the long-run
//! variance of the scores `x_t * e_t`, estimated here by Newey–West with a
//! Bartlett kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{GdfmError, Result};
use crate::lag_design::ColumnLabel;
use crate::scalar::Scalar;

/// OLS coefficients and residuals.
#[derive(Debug, Clone)]
pub struct OlsFit<T: Scalar> {
    pub beta: DVector<T>,
    pub residuals: DVector<T>,
}

/// Least squares via Householder QR of `X`.
pub fn ols<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>) -> Result<OlsFit<T>> {
    let (n, k) = x.shape();
    if n != y.len() {
        return Err(GdfmError::InvalidInput(format!(
            "design has {n} rows, response {}",
            y.len()
        )));
    }
    if k == 0 || n < k {
        return Err(GdfmError::SingularGram(format!("{n} observations for {k} regressors")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let top = r.diagonal().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let floor = top * T::from_count(n.max(k)) * T::eps();
    if !(top > T::zero()) || r.diagonal().iter().any(|v| !(v.abs() > floor)) {
        return Err(GdfmError::SingularGram(
            "design columns are numerically collinear".into(),
        ));
    }
    let qty = qr.q().tr_mul(y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| GdfmError::SingularGram("triangular solve failed".into()))?;
    let residuals = y - x * &beta;
    Ok(OlsFit { beta, residuals })
}

/// Newey–West truncation lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `floor(4 (T_eff / 100)^(2/9))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl Bandwidth {
    pub fn resolve(self, n_obs: usize) -> usize {
        match self {
            Bandwidth::Auto => (4.0 * (n_obs as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize,
            Bandwidth::Fixed(l) => l,
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = GdfmError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Bandwidth::Auto);
        }
        s.parse()
            .map(Bandwidth::Fixed)
            .map_err(|_| GdfmError::InvalidInput(format!("bandwidth must be 'auto' or a count, got '{s}'")))
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Auto => write!(f, "auto"),
            Bandwidth::Fixed(l) => write!(f, "{l}"),
        }
    }
}

/// Long-run covariance of the rows of `scores` with Bartlett weights.
pub fn newey_west<T: Scalar>(scores: &DMatrix<T>, lags: usize) -> DMatrix<T> {
    let n = scores.nrows();
    let nt = T::from_count(n);
    let mut s = scores.tr_mul(scores) / nt;
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = T::one() - T::from_count(l) / T::from_count(lags + 1);
        let lead = scores.rows(l, n - l);
        let lagged = scores.rows(0, n - l);
        let gamma = lead.tr_mul(&lagged) / nt;
        s += (&gamma + gamma.transpose()) * w;
    }
    s
}

/// HAC estimate of `Gx^{-1} Gxe Gx^{-1}` from a design and its OLS residuals.
pub fn hac_avar<T: Scalar>(x: &DMatrix<T>, residuals: &DVector<T>, bandwidth: Bandwidth) -> Result<DMatrix<T>> {
    let (n, k) = x.shape();
    if residuals.len() != n {
        return Err(GdfmError::InvalidInput("residuals do not match the design".into()));
    }
    let lags = bandwidth.resolve(n);
    if lags >= n {
        return Err(GdfmError::InvalidInput(format!(
            "bandwidth {lags} must be below T_eff = {n}"
        )));
    }
    let mut scores = x.clone();
    for (mut row, &e) in scores.row_iter_mut().zip(residuals.iter()) {
        row *= e;
    }
    let long_run = newey_west(&scores, lags);
    let gx = x.tr_mul(x) / T::from_count(n);
    let gx_inv = gx
        .cholesky()
        .ok_or_else(|| GdfmError::SingularGram(format!("Gram matrix of {k} columns is not positive definite")))?
        .inverse();
    let avar = &gx_inv * long_run * &gx_inv;
    Ok((&avar + avar.transpose()) * T::lit(0.5))
}

/// Tail convention of reported p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMode {
    /// `2 * (1 - Phi(|t|))`, evaluated without cancellation.
    #[default]
    TwoSided,
    /// `1 - Phi(|t|)` evaluated literally, which reproduces the rounding of
    /// one-sided reference tables.
    OneSidedParity,
}

impl std::str::FromStr for PValueMode {
    type Err = GdfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(PValueMode::TwoSided),
            "one-sided" | "one-sided-parity" => Ok(PValueMode::OneSidedParity),
            other => Err(GdfmError::InvalidInput(format!("unknown p-value mode '{other}'"))),
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// p-value of a t statistic against the standard normal.
pub fn normal_p_value(t: f64, mode: PValueMode) -> f64 {
    let n = std_normal();
    match mode {
        PValueMode::TwoSided => (2.0 * n.cdf(-t.abs())).min(1.0),
        PValueMode::OneSidedParity => 1.0 - n.cdf(t.abs()),
    }
}

/// Conventional significance codes.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Estimates, HAC variance and test statistics for one series.
#[derive(Debug, Clone)]
pub struct InferenceResult<T: Scalar> {
    pub labels: Vec<ColumnLabel>,
    pub beta_hat: DVector<T>,
    pub residuals: DVector<T>,
    /// Estimated asymptotic variance of `sqrt(T_eff)(b_hat - b)`.
    pub avar: DMatrix<T>,
    pub se: DVector<T>,
    pub t_stats: DVector<T>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    pub bandwidth: usize,
}

/// OLS plus HAC inference on a selected design.
pub fn infer<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    labels: &[ColumnLabel],
    bandwidth: Bandwidth,
    mode: PValueMode,
) -> Result<InferenceResult<T>> {
    if labels.len() != x.ncols() {
        return Err(GdfmError::InvalidInput(
            "one label per design column is required".into(),
        ));
    }
    let fit = ols(x, y)?;
    let avar = hac_avar(x, &fit.residuals, bandwidth)?;
    let n = x.nrows();
    let nt = T::from_count(n);
    let se = DVector::from_iterator(
        x.ncols(),
        (0..x.ncols()).map(|j| (avar[(j, j)].max(T::zero()) / nt).sqrt()),
    );
    let t_stats = fit.beta.zip_map(&se, |b, s| b / s);
    let p_values = t_stats.iter().map(|t| normal_p_value(t.as_f64(), mode)).collect();
    Ok(InferenceResult {
        labels: labels.to_vec(),
        beta_hat: fit.beta,
        residuals: fit.residuals,
        avar,
        se,
        t_stats,
        p_values,
        n_obs: n,
        bandwidth: bandwidth.resolve(n),
    })
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

/// Coefficient table rows in design order.
pub fn t_table<T: Scalar>(result: &InferenceResult<T>) -> Vec<CoefRow> {
    (0..result.beta_hat.len())
        .map(|j| CoefRow {
            label: result.labels[j].to_string(),
            estimate: result.beta_hat[j].as_f64(),
            std_error: result.se[j].as_f64(),
            t_value: result.t_stats[j].as_f64(),
            p_value: result.p_values[j],
            stars: stars(result.p_values[j]),
        })
        .collect()
}

/// Header of the coefficient table CSV.
pub const TABLE_HEADER: [&str; 6] = ["", "Estimate", "Std. error", "t value", "Pr(>|t|)", "stars"];

/// Writes coefficient rows as CSV: a label column followed by the five
/// columns Estimate, Std. error, t value, Pr(>|t|), stars.
pub fn write_table_csv<W: std::io::Write>(rows: &[CoefRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        w.write_record([
            row.label.clone(),
            row.estimate.to_string(),
            row.std_error.to_string(),
            row.t_value.to_string(),
            row.p_value.to_string(),
            row.stars.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wald test that every coefficient on a lag `> 0` column is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFactorTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WeakFactorOutcome {
    Tested(WeakFactorTest),
    /// The selection contains no lagged factor.
    NoCandidates,
}

impl WeakFactorOutcome {
    pub fn rejects_at(&self, level: f64) -> bool {
        matches!(self, WeakFactorOutcome::Tested(t) if t.p_value < level)
    }
}

/// `W = T_eff * b_R' (R avar R')^{-1} b_R` over the lagged columns,
/// compared with a chi-square with as many degrees of freedom.
pub fn weak_factor_test<T: Scalar>(result: &InferenceResult<T>) -> Result<WeakFactorOutcome> {
    let lagged: Vec<usize> = result
        .labels
        .iter()
        .enumerate()
        .filter_map(|(j, l)| (l.lag > 0).then_some(j))
        .collect();
    if lagged.is_empty() {
        return Ok(WeakFactorOutcome::NoCandidates);
    }
    let b = DVector::from_iterator(lagged.len(), lagged.iter().map(|&j| result.beta_hat[j]));
    let v = result.avar.select_rows(&lagged).select_columns(&lagged);
    let chol = v
        .cholesky()
        .ok_or_else(|| GdfmError::SingularGram("restricted variance is not positive definite".into()))?;
    let statistic = (T::from_count(result.n_obs) * b.dot(&chol.solve(&b))).as_f64().max(0.0);
    let dof = lagged.len();
    let chi2 = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(WeakFactorOutcome::Tested(WeakFactorTest {
        statistic,
        dof,
        p_value: 1.0 - chi2.cdf(statistic),
    }))
}

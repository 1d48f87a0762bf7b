//! Canonical decomposition `y = C + e^chi + xi` of a panel on the
//! estimation sample of the lag design.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GdfmError, Result};
use crate::lag_design::LagBasis;
use crate::scalar::Scalar;

/// Static common component and its loadings.
#[derive(Debug, Clone)]
pub struct StaticComponent<T: Scalar> {
    /// `T_eff × n`.
    pub c_hat: DMatrix<T>,
    /// `n × r`.
    pub loadings: DMatrix<T>,
}

/// Least-squares projection of every column of `target` on the columns of
/// `factors`.
fn project<T: Scalar>(target: &DMatrix<T>, factors: &DMatrix<T>) -> Result<StaticComponent<T>> {
    let (t, r) = factors.shape();
    if r == 0 {
        return Err(GdfmError::InvalidInput(
            "at least one factor is required (r >= 1)".into(),
        ));
    }
    if target.nrows() != t {
        return Err(GdfmError::InvalidInput(format!(
            "{} rows of data against {t} rows of factors",
            target.nrows()
        )));
    }
    if t < r {
        return Err(GdfmError::SingularGram(format!("{t} observations for {r} factors")));
    }
    let qr = factors.clone().qr();
    let upper = qr.r();
    let top = upper.diagonal().amax();
    if upper
        .diagonal()
        .iter()
        .any(|d| !(d.abs() > top * T::from_count(t) * T::eps()))
    {
        return Err(GdfmError::SingularGram("factor columns are collinear".into()));
    }
    let coef = upper
        .solve_upper_triangular(&qr.q().tr_mul(target))
        .ok_or_else(|| GdfmError::SingularGram("triangular solve failed".into()))?;
    Ok(StaticComponent {
        c_hat: factors * &coef,
        loadings: coef.transpose(),
    })
}

/// `Lambda_i` by OLS of each `y_i` on `F`, and `C_it = Lambda_i F_t`.
pub fn static_cc<T: Scalar>(y: &DMatrix<T>, factors: &DMatrix<T>) -> Result<StaticComponent<T>> {
    project(y, factors)
}

/// `e^chi = chi - C`.
pub fn weak_cc<T: Scalar>(chi_hat: &DMatrix<T>, c_hat: &DMatrix<T>) -> Result<DMatrix<T>> {
    if chi_hat.shape() != c_hat.shape() {
        return Err(GdfmError::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            chi_hat.shape(),
            c_hat.shape()
        )));
    }
    Ok(chi_hat - c_hat)
}

/// Fitted dynamic common components `chi_it = beta_i' x_it` on the lag
/// design, one column per series. `columns[i]` are the design columns whose
/// coefficients are `betas[i]`.
pub fn dynamic_cc<T: Scalar>(basis: &LagBasis<T>, columns: &[Vec<usize>], betas: &[DVector<T>]) -> Result<DMatrix<T>> {
    if columns.len() != betas.len() {
        return Err(GdfmError::InvalidInput(
            "one coefficient vector per selection is required".into(),
        ));
    }
    let mut chi = DMatrix::zeros(basis.n_rows(), columns.len());
    for (i, (cols, beta)) in columns.iter().zip(betas).enumerate() {
        if cols.len() != beta.len() {
            return Err(GdfmError::InvalidInput(format!(
                "series {i}: selection and coefficients differ in length"
            )));
        }
        let mut out = chi.column_mut(i);
        for (&c, &b) in cols.iter().zip(beta.iter()) {
            if c >= basis.n_columns() {
                return Err(GdfmError::InvalidInput(format!("design column {c} out of range")));
            }
            out.axpy(b, &basis.design.column(c), T::one());
        }
    }
    Ok(chi)
}

/// All parts of the decomposition on the `T_eff` estimation rows.
#[derive(Debug, Clone)]
pub struct Decomposition<T: Scalar> {
    pub y: DMatrix<T>,
    pub chi_hat: DMatrix<T>,
    pub c_hat: DMatrix<T>,
    pub loadings: DMatrix<T>,
    pub e_chi_hat: DMatrix<T>,
    pub xi_hat: DMatrix<T>,
    /// Contemporaneous factors the static part is built on (`T_eff × r`).
    pub factors: DMatrix<T>,
}

impl<T: Scalar> Decomposition<T> {
    /// Builds the decomposition from the aligned panel rows, the lag-0
    /// factors and the fitted dynamic component. `C` is the projection of
    /// `chi` on the factors, which coincides with the OLS of `y` on the
    /// factors whenever the lag-0 block is part of every selection.
    pub fn assemble(y: DMatrix<T>, factors: DMatrix<T>, chi_hat: DMatrix<T>) -> Result<Self> {
        if y.shape() != chi_hat.shape() {
            return Err(GdfmError::InvalidInput(format!(
                "panel rows {:?} do not match the dynamic component {:?}",
                y.shape(),
                chi_hat.shape()
            )));
        }
        let stat = project(&chi_hat, &factors)?;
        let e_chi_hat = weak_cc(&chi_hat, &stat.c_hat)?;
        let xi_hat = &y - &chi_hat;
        Ok(Decomposition {
            y,
            chi_hat,
            c_hat: stat.c_hat,
            loadings: stat.loadings,
            e_chi_hat,
            xi_hat,
            factors,
        })
    }

    /// Convenience constructor from a lag basis and per-series fits; `y` must
    /// already be restricted to the design rows.
    pub fn from_fits(y: DMatrix<T>, basis: &LagBasis<T>, columns: &[Vec<usize>], betas: &[DVector<T>]) -> Result<Self> {
        let chi = dynamic_cc(basis, columns, betas)?;
        let factors = basis.design.columns(0, basis.r).into_owned();
        Self::assemble(y, factors, chi)
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.y.ncols()
    }

    /// `max |C + e^chi + xi - y|`.
    pub fn additivity_error(&self) -> T {
        (&self.c_hat + &self.e_chi_hat + &self.xi_hat - &self.y).amax()
    }

    /// `n × r` matrix of cross-moments `T_eff^{-1} sum_t e^chi_it F_jt`.
    pub fn orthogonality(&self) -> DMatrix<T> {
        self.e_chi_hat.tr_mul(&self.factors) / T::from_count(self.n_obs())
    }
}

/// Per-series variance fractions with the cross terms that keep them from
/// summing to one in finite samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareRow {
    pub series: String,
    pub share_c: f64,
    pub share_weak: f64,
    pub share_chi: f64,
    pub share_xi: f64,
    pub cov_c_weak: f64,
    pub cov_chi_xi: f64,
}

fn covariance<T: Scalar>(a: nalgebra::DVectorView<'_, T>, b: nalgebra::DVectorView<'_, T>) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x.as_f64() - ma) * (y.as_f64() - mb))
        .sum::<f64>()
        / n
}

/// Sample-variance ratios `var(part_i) / var(y_i)` on the estimation rows.
pub fn variance_shares<T: Scalar>(decomp: &Decomposition<T>, series_ids: &[String]) -> Result<Vec<ShareRow>> {
    if series_ids.len() != decomp.n_series() {
        return Err(GdfmError::InvalidInput("one id per series is required".into()));
    }
    (0..decomp.n_series())
        .map(|i| {
            let y = decomp.y.column(i);
            let vy = covariance(y.as_view(), y.as_view());
            if !(vy > 0.0) {
                return Err(GdfmError::ZeroVariance {
                    series: series_ids[i].clone(),
                });
            }
            let var = |m: &DMatrix<T>| covariance(m.column(i).as_view(), m.column(i).as_view()) / vy;
            Ok(ShareRow {
                series: series_ids[i].clone(),
                share_c: var(&decomp.c_hat),
                share_weak: var(&decomp.e_chi_hat),
                share_chi: var(&decomp.chi_hat),
                share_xi: var(&decomp.xi_hat),
                cov_c_weak: covariance(decomp.c_hat.column(i).as_view(), decomp.e_chi_hat.column(i).as_view()) / vy,
                cov_chi_xi: covariance(decomp.chi_hat.column(i).as_view(), decomp.xi_hat.column(i).as_view()) / vy,
            })
        })
        .collect()
}

/// Shares as CSV with columns
/// `series,share_C,share_weak,share_chi,share_xi,cov_C_weak,cov_chi_xi`.
pub fn write_shares_csv<W: std::io::Write>(rows: &[ShareRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "series",
        "share_C",
        "share_weak",
        "share_chi",
        "share_xi",
        "cov_C_weak",
        "cov_chi_xi",
    ])?;
    for r in rows {
        w.write_record([
            r.series.clone(),
            r.share_c.to_string(),
            r.share_weak.to_string(),
            r.share_chi.to_string(),
            r.share_xi.to_string(),
            r.cov_c_weak.to_string(),
            r.cov_chi_xi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One decomposition part as a `time,<series...>` CSV.
pub fn write_part_csv<T: Scalar, W: std::io::Write>(
    part: &DMatrix<T>,
    series_ids: &[String],
    time_index: &[String],
    writer: W,
) -> Result<()> {
    if series_ids.len() != part.ncols() || time_index.len() != part.nrows() {
        return Err(GdfmError::InvalidInput("labels do not match the matrix shape".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("time").chain(series_ids.iter().map(String::as_str)))?;
    for (t, label) in time_index.iter().enumerate() {
        w.write_record(std::iter::once(label.clone()).chain(part.row(t).iter().map(|v| v.as_f64().to_string())))?;
    }
    w.flush()?;
    Ok(())
}

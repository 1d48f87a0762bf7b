//! LASSO by cyclic coordinate descent, rolling-window penalty calibration and
//! final basis selection.
//!
//! The objective is `(1/(2 T_eff)) ||y - X b||^2 + lambda ||b||_1` without an
//! intercept. All solvers work on the moments `G = X'X / T_eff` and
//! `c = X'y / T_eff`, which lets many responses share one Gram matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::extract_factors;
use crate::error::{GdfmError, Result};
use crate::lag_design::{build_lag_matrix, gram_rank_check, ColumnLabel, LagBasis, SelectionMask};
use crate::panel::{standardize, Panel};
use crate::scalar::Scalar;

/// Inner active-set sweeps after which a direct solve is attempted.
const DIRECT_SOLVE_AFTER: usize = 10;

/// Solver controls for [`lasso_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Convergence when the largest coefficient change of a full sweep is
    /// below this value.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

/// Solution of one LASSO problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<T: Scalar> {
    pub coefficients: DVector<T>,
    pub penalty: T,
    pub active_set: Vec<usize>,
    pub sweeps: usize,
    /// Largest violation of the KKT conditions at the returned solution.
    pub kkt_violation: T,
}

/// Moment form of a LASSO regression.
#[derive(Debug, Clone)]
pub struct LassoProblem<T: Scalar> {
    gram: DMatrix<T>,
    xty: DVector<T>,
    n_obs: usize,
}

fn soft_threshold<T: Scalar>(z: T, lambda: T) -> T {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        T::zero()
    }
}

impl<T: Scalar> LassoProblem<T> {
    pub fn new(x: &DMatrix<T>, y: &DVector<T>) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 || x.ncols() == 0 {
            return Err(GdfmError::InvalidInput(format!(
                "design {}x{} and response of length {} do not conform",
                x.nrows(),
                x.ncols(),
                y.len()
            )));
        }
        let n = T::from_count(x.nrows());
        Ok(Self {
            gram: x.tr_mul(x) / n,
            xty: x.tr_mul(y) / n,
            n_obs: x.nrows(),
        })
    }

    pub fn from_moments(gram: DMatrix<T>, xty: DVector<T>, n_obs: usize) -> Result<Self> {
        if !gram.is_square() || gram.nrows() != xty.len() {
            return Err(GdfmError::InvalidInput(
                "Gram matrix and cross moments do not conform".into(),
            ));
        }
        Ok(Self { gram, xty, n_obs })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_columns(&self) -> usize {
        self.xty.len()
    }

    /// Smallest penalty at which the zero vector is optimal.
    pub fn lambda_max(&self) -> T {
        self.xty.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `X'(y - X b) / T_eff`.
    pub fn gradient(&self, beta: &DVector<T>) -> DVector<T> {
        &self.xty - &self.gram * beta
    }

    pub fn kkt_violation(&self, beta: &DVector<T>, lambda: T) -> T {
        let g = self.gradient(beta);
        g.iter()
            .zip(beta.iter())
            .map(|(&gj, &bj)| {
                if bj > T::zero() {
                    (gj - lambda).abs()
                } else if bj < T::zero() {
                    (gj + lambda).abs()
                } else {
                    (gj.abs() - lambda).max(T::zero())
                }
            })
            .fold(T::zero(), |m, v| m.max(v))
    }

    /// Solves at `lambda`, optionally warm-started.
    pub fn solve(&self, lambda: T, warm_start: Option<&DVector<T>>, opts: &LassoOptions) -> Result<LassoFit<T>> {
        if !(lambda >= T::zero()) {
            return Err(GdfmError::InvalidInput(format!(
                "penalty must be non-negative, got {lambda}"
            )));
        }
        let k = self.n_columns();
        let mut beta = match warm_start {
            Some(b) if b.len() == k => b.clone(),
            Some(b) => {
                return Err(GdfmError::InvalidInput(format!(
                    "warm start has length {}, expected {k}",
                    b.len()
                )))
            }
            None => DVector::zeros(k),
        };
        let mut gb = &self.gram * &beta;
        let tol = T::lit(opts.tol);
        let mut sweeps = 0;

        // One coordinate update; returns the absolute change.
        let update = |j: usize, beta: &mut DVector<T>, gb: &mut DVector<T>| -> T {
            let gjj = self.gram[(j, j)];
            let old = beta[j];
            let new = if gjj > T::zero() {
                soft_threshold(self.xty[j] - gb[j] + gjj * old, lambda) / gjj
            } else {
                T::zero()
            };
            let delta = new - old;
            if delta != T::zero() {
                beta[j] = new;
                gb.axpy(delta, &self.gram.column(j), T::one());
            }
            delta.abs()
        };

        loop {
            let mut max_change = T::zero();
            for j in 0..k {
                max_change = max_change.max(update(j, &mut beta, &mut gb));
            }
            sweeps += 1;
            if max_change < tol {
                break;
            }
            // Iterate on the current active set before the next full sweep.
            // Slow progress hands over to a direct solve on the active set;
            // the next full sweep checks the inactive coordinates.
            let active: Vec<usize> = (0..k).filter(|&j| beta[j] != T::zero()).collect();
            let mut inner = 0;
            loop {
                if sweeps >= opts.max_sweeps {
                    break;
                }
                let mut change = T::zero();
                for &j in &active {
                    change = change.max(update(j, &mut beta, &mut gb));
                }
                sweeps += 1;
                inner += 1;
                if change < tol {
                    break;
                }
                if inner == DIRECT_SOLVE_AFTER {
                    if let Some(b) = self.direct_solve(&beta, lambda) {
                        gb = &self.gram * &b;
                        beta = b;
                        break;
                    }
                }
            }
            if sweeps >= opts.max_sweeps {
                return Err(GdfmError::NonConvergence {
                    sweeps,
                    kkt_violation: self.kkt_violation(&beta, lambda).as_f64(),
                });
            }
        }
        let active_set = (0..k).filter(|&j| beta[j] != T::zero()).collect();
        let kkt_violation = self.kkt_violation(&beta, lambda);
        Ok(LassoFit {
            coefficients: beta,
            penalty: lambda,
            active_set,
            sweeps,
            kkt_violation,
        })
    }

    /// Feature-sign descent on the support of `beta`: steps towards the
    /// exact minimiser for the current signs, stopping at the first zero
    /// crossing and dropping that coordinate, until the signs are
    /// reproduced. The objective never increases, so the result can replace
    /// `beta`; coordinates outside the support are left to the next sweep.
    fn direct_solve(&self, beta: &DVector<T>, lambda: T) -> Option<DVector<T>> {
        let mut b = beta.clone();
        for _ in 0..=b.len() {
            let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] != T::zero()).collect();
            if active.is_empty() {
                return Some(b);
            }
            let g = self.gram.select_rows(&active).select_columns(&active);
            let rhs = DVector::from_iterator(
                active.len(),
                active.iter().map(|&j| self.xty[j] - b[j].signum() * lambda),
            );
            let target = g.cholesky()?.solve(&rhs);
            let mut step = T::one();
            let mut crossing = None;
            for (q, &j) in active.iter().enumerate() {
                if !(target[q] * b[j].signum() > T::zero()) {
                    let t = b[j] / (b[j] - target[q]);
                    if t < step {
                        step = t;
                        crossing = Some(j);
                    }
                }
            }
            match crossing {
                None => {
                    for (q, &j) in active.iter().enumerate() {
                        b[j] = target[q];
                    }
                    return Some(b);
                }
                Some(jc) => {
                    for (q, &j) in active.iter().enumerate() {
                        let bj = b[j];
                        b[j] = bj + step * (target[q] - bj);
                    }
                    b[jc] = T::zero();
                }
            }
        }
        None
    }

    /// Solves every penalty of a descending grid from its own starting point,
    /// typically the solution of a neighbouring problem at the same penalty.
    pub fn path_from(&self, grid: &[T], starts: &[DVector<T>], opts: &LassoOptions) -> Result<Vec<LassoFit<T>>> {
        check_descending(grid)?;
        if starts.len() != grid.len() {
            return Err(GdfmError::InvalidInput(
                "one starting point per penalty is required".into(),
            ));
        }
        grid.iter()
            .zip(starts)
            .map(|(&l, b)| self.solve(l, Some(b), opts))
            .collect()
    }

    /// Solves along a descending grid with warm starts.
    pub fn path(&self, grid: &[T], opts: &LassoOptions) -> Result<Vec<LassoFit<T>>> {
        check_descending(grid)?;
        let mut fits: Vec<LassoFit<T>> = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let warm = fits.last().map(|f| f.coefficients.clone());
            fits.push(self.solve(lambda, warm.as_ref(), opts)?);
        }
        Ok(fits)
    }
}

/// Solves one LASSO problem from scratch with default options.
pub fn lasso_solve<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, lambda: T) -> Result<LassoFit<T>> {
    LassoProblem::new(x, y)?.solve(lambda, None, &LassoOptions::default())
}

fn check_descending<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(GdfmError::InvalidInput("empty penalty grid".into()));
    }
    if grid.iter().any(|l| !(*l >= T::zero())) || grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(GdfmError::InvalidInput(
            "penalty grid must be non-negative and strictly descending".into(),
        ));
    }
    Ok(())
}

/// `n_grid` log-spaced penalties from `lambda_max` down to `ratio * lambda_max`.
pub fn grid_from_max<T: Scalar>(lambda_max: T, n_grid: usize, ratio: f64) -> Result<Vec<T>> {
    if n_grid < 2 {
        return Err(GdfmError::InvalidInput(format!(
            "grid needs at least 2 points, got {n_grid}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GdfmError::InvalidInput(format!(
            "grid ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if !(lambda_max > T::zero()) {
        return Err(GdfmError::InvalidInput(
            "response is orthogonal to every design column; no penalty grid".into(),
        ));
    }
    let last = (n_grid - 1) as f64;
    Ok((0..n_grid)
        .map(|k| {
            if k == 0 {
                lambda_max
            } else if k == n_grid - 1 {
                lambda_max * T::lit(ratio)
            } else {
                lambda_max * T::lit(ratio.powf(k as f64 / last))
            }
        })
        .collect())
}

/// Log-spaced descending grid starting at `max_j |X_j'y| / T_eff`.
pub fn penalty_grid<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, n_grid: usize, ratio: f64) -> Result<Vec<T>> {
    grid_from_max(LassoProblem::new(x, y)?.lambda_max(), n_grid, ratio)
}

/// Settings of the rolling-window calibration protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub r: usize,
    pub p: usize,
    /// Rows of the lag design per window; the last row is held out.
    pub window: usize,
    /// Fraction of the sample used as calibration set.
    pub calib_frac: f64,
    pub stride: usize,
    /// Re-run the principal components inside every window instead of once
    /// on the whole calibration set.
    pub reestimate_factors: bool,
    pub lasso: LassoOptions,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            r: 8,
            p: 24,
            window: 488,
            calib_frac: 0.8,
            stride: 1,
            reestimate_factors: false,
            lasso: LassoOptions::default(),
        }
    }
}

/// Outcome of calibrating one series.
#[derive(Debug, Clone)]
pub struct CalibrationResult<T: Scalar> {
    pub series: String,
    pub penalty_grid: Vec<T>,
    /// Held-out squared error averaged over windows, one entry per penalty.
    pub mse_per_penalty: Vec<T>,
    pub optimal_index: usize,
    pub optimal_penalty: T,
    pub labels: Vec<ColumnLabel>,
    /// Time stamp of the held-out observation of each window.
    pub window_targets: Vec<String>,
    /// Active set at the optimal penalty, one entry per window.
    pub selections: Vec<Vec<usize>>,
    /// Windows in which the active-set size was not monotone along the grid.
    pub monotonicity_violations: usize,
}

impl<T: Scalar> CalibrationResult<T> {
    /// Window × column incidence of the optimal-penalty selections.
    pub fn write_incidence_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["window_target".to_string()];
        header.extend(self.labels.iter().map(ToString::to_string));
        w.write_record(&header)?;
        for (target, sel) in self.window_targets.iter().zip(&self.selections) {
            let mut row = vec![0u8; self.labels.len()];
            sel.iter().for_each(|&c| row[c] = 1);
            let mut rec = vec![target.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Penalty path with its out-of-sample error.
    pub fn write_path_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "mse", "optimal"])?;
        for (k, (l, m)) in self.penalty_grid.iter().zip(&self.mse_per_penalty).enumerate() {
            w.write_record([
                l.to_string(),
                m.to_string(),
                u8::from(k == self.optimal_index).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Bits(Vec<u64>);

impl Bits {
    fn from_active(k: usize, active: &[usize]) -> Self {
        let mut words = vec![0u64; k.div_ceil(64)];
        for &j in active {
            words[j / 64] |= 1 << (j % 64);
        }
        Bits(words)
    }

    fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, &word) in self.0.iter().enumerate() {
            for b in 0..64 {
                if word >> b & 1 == 1 {
                    out.push(w * 64 + b);
                }
            }
        }
        out
    }
}

/// Per-window result of one series: squared holdout errors per penalty,
/// active sets, whether their sizes grow along the grid, and the solutions.
type WindowOutcome<T> = (Vec<T>, Vec<Bits>, bool, Vec<DVector<T>>);

struct SeriesAccumulator<T: Scalar> {
    sse: Vec<T>,
    selections: Vec<Vec<Bits>>,
    violations: usize,
    /// Solutions of the previous window, the warm starts of the next.
    last: Option<Vec<DVector<T>>>,
}

/// Rolling-window calibration shared by many series of the same panel.
///
/// Factors are extracted once on the whole (re-standardized) calibration set
/// unless `reestimate_factors` is set; each window fits the LASSO path on all
/// but its last row and scores the prediction of that row's response.
pub struct RollingCalibrator<T: Scalar> {
    settings: CalibrationSettings,
    calib: Panel<T>,
    basis: Option<LagBasis<T>>,
    n_windows: usize,
}

impl<T: Scalar> RollingCalibrator<T> {
    pub fn new(panel: &Panel<T>, settings: CalibrationSettings) -> Result<Self> {
        let s = &settings;
        if !(s.calib_frac > 0.0 && s.calib_frac <= 1.0) {
            return Err(GdfmError::InvalidInput(format!(
                "calibration fraction must lie in (0, 1], got {}",
                s.calib_frac
            )));
        }
        if s.stride == 0 || s.r == 0 {
            return Err(GdfmError::InvalidInput("stride and r must be positive".into()));
        }
        let calib_len = (s.calib_frac * panel.n_obs() as f64).floor() as usize;
        if calib_len <= s.p + 1 {
            return Err(GdfmError::InvalidInput(format!(
                "calibration set of {calib_len} rows is too short for p = {}",
                s.p
            )));
        }
        let design_rows = calib_len - s.p;
        if s.window < 3 || s.window > design_rows {
            return Err(GdfmError::InvalidInput(format!(
                "window of {} rows does not fit the {design_rows} usable calibration rows",
                s.window
            )));
        }
        let calib = standardize(&panel.slice_rows(0, calib_len)?)?;
        let basis = if s.reestimate_factors {
            None
        } else {
            let factors = extract_factors(&calib, s.r)?;
            Some(build_lag_matrix(&factors.factors, s.p)?)
        };
        let n_windows = (design_rows - s.window) / s.stride + 1;
        Ok(Self {
            settings,
            calib,
            basis,
            n_windows,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn calibration_panel(&self) -> &Panel<T> {
        &self.calib
    }

    /// Descending grid from the calibration-sample `lambda_max` of a series.
    pub fn default_grid(&self, series: usize, n_grid: usize, ratio: f64) -> Result<Vec<T>> {
        let basis = match &self.basis {
            Some(b) => b.clone(),
            None => build_lag_matrix(&extract_factors(&self.calib, self.settings.r)?.factors, self.settings.p)?,
        };
        let y = self.response(&self.calib, series)?;
        penalty_grid(&basis.design, &y, n_grid, ratio)
    }

    fn response(&self, panel: &Panel<T>, series: usize) -> Result<DVector<T>> {
        if series >= panel.n_series() {
            return Err(GdfmError::InvalidInput(format!("series index {series} out of range")));
        }
        let p = self.settings.p;
        Ok(panel.values().column(series).rows(p, panel.n_obs() - p).into_owned())
    }

    /// Design rows and responses (all series) of window `w`, held-out row last.
    fn window_data(&self, w: usize) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let s = &self.settings;
        let start = w * s.stride;
        match &self.basis {
            Some(basis) => {
                let x = basis.design.rows(start, s.window).into_owned();
                let y = self.calib.values().rows(start + s.p, s.window).into_owned();
                Ok((x, y))
            }
            None => {
                let sub = standardize(&self.calib.slice_rows(start, start + s.window + s.p)?)?;
                let factors = extract_factors(&sub, s.r)?;
                let basis = build_lag_matrix(&factors.factors, s.p)?;
                let y = sub.values().rows(s.p, s.window).into_owned();
                Ok((basis.design, y))
            }
        }
    }

    /// Calibrates each listed series against its own descending grid.
    /// Series are processed in parallel; results are returned in input order.
    pub fn calibrate_many(&self, series: &[usize], grids: &[Vec<T>]) -> Result<Vec<CalibrationResult<T>>> {
        if series.len() != grids.len() {
            return Err(GdfmError::InvalidInput("one grid per series is required".into()));
        }
        for (&i, g) in series.iter().zip(grids) {
            check_descending(g)?;
            if i >= self.calib.n_series() {
                return Err(GdfmError::InvalidInput(format!("series index {i} out of range")));
            }
        }
        let s = &self.settings;
        let k = s.r * (s.p + 1);
        let mut accs: Vec<SeriesAccumulator<T>> = grids
            .iter()
            .map(|g| SeriesAccumulator {
                sse: vec![T::zero(); g.len()],
                selections: Vec::with_capacity(self.n_windows),
                violations: 0,
                last: None,
            })
            .collect();
        let mut targets = Vec::with_capacity(self.n_windows);
        let train = s.window - 1;
        let n_train = T::from_count(train);
        for w in 0..self.n_windows {
            let (x, y_all) = self.window_data(w)?;
            let x_train = x.rows(0, train);
            let x_test = x.row(train).transpose();
            let gram = x_train.tr_mul(&x_train) / n_train;
            let y_sel = y_all.select_columns(series);
            let xty_all = x_train.tr_mul(&y_sel.rows(0, train)) / n_train;
            targets.push(self.calib.time_index()[w * s.stride + s.p + train].clone());

            let outcomes: Vec<Result<WindowOutcome<T>>> = accs
                .par_iter()
                .enumerate()
                .map(|(q, acc)| {
                    let problem = LassoProblem::from_moments(gram.clone(), xty_all.column(q).into_owned(), train)?;
                    let fits = match &acc.last {
                        Some(starts) => problem.path_from(&grids[q], starts, &s.lasso)?,
                        None => problem.path(&grids[q], &s.lasso)?,
                    };
                    let target = y_sel[(train, q)];
                    let errors = fits
                        .iter()
                        .map(|f| {
                            let e = target - x_test.dot(&f.coefficients);
                            e * e
                        })
                        .collect();
                    let monotone = fits.windows(2).all(|p| p[1].active_set.len() >= p[0].active_set.len());
                    let bits = fits.iter().map(|f| Bits::from_active(k, &f.active_set)).collect();
                    let coefficients = fits.into_iter().map(|f| f.coefficients).collect();
                    Ok((errors, bits, monotone, coefficients))
                })
                .collect();
            for (acc, outcome) in accs.iter_mut().zip(outcomes) {
                let (errors, bits, monotone, coefficients) = outcome?;
                acc.sse.iter_mut().zip(errors).for_each(|(a, e)| *a += e);
                acc.selections.push(bits);
                acc.last = Some(coefficients);
                if !monotone {
                    acc.violations += 1;
                }
            }
        }

        let labels = crate::lag_design::lag_labels(s.r, s.p);
        let n_win = T::from_count(self.n_windows);
        Ok(series
            .iter()
            .zip(grids)
            .zip(accs)
            .map(|((&i, grid), acc)| {
                let mse: Vec<T> = acc.sse.iter().map(|&v| v / n_win).collect();
                let optimal_index = mse
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, &v)| if v < mse[best] { j } else { best });
                if acc.violations > 0 {
                    log::debug!(
                        "series {}: active-set size not monotone along the grid in {} windows",
                        self.calib.series_ids()[i],
                        acc.violations
                    );
                }
                CalibrationResult {
                    series: self.calib.series_ids()[i].clone(),
                    penalty_grid: grid.clone(),
                    optimal_penalty: grid[optimal_index],
                    optimal_index,
                    mse_per_penalty: mse,
                    labels: labels.clone(),
                    window_targets: targets.clone(),
                    selections: acc.selections.iter().map(|w| w[optimal_index].indices()).collect(),
                    monotonicity_violations: acc.violations,
                }
            })
            .collect())
    }
}

/// Rolling-window calibration of a single series.
pub fn rolling_calibrate<T: Scalar>(
    panel: &Panel<T>,
    series: usize,
    settings: &CalibrationSettings,
    grid: &[T],
) -> Result<CalibrationResult<T>> {
    let calibrator = RollingCalibrator::new(panel, settings.clone())?;
    Ok(calibrator
        .calibrate_many(&[series], &[grid.to_vec()])?
        .pop()
        .expect("one result per series"))
}

/// Final basis of one series.
#[derive(Debug, Clone)]
pub struct FinalSelection<T: Scalar> {
    pub mask: SelectionMask,
    pub fit: LassoFit<T>,
    /// Columns removed after the LASSO fit to restore a full-rank Gram.
    pub dropped: Vec<usize>,
}

/// Full-sample LASSO at `lambda` on a prepared lag basis; the active set
/// becomes the mask. Rank-deficient selections lose their smallest
/// coefficients until the Gram matrix is nonsingular.
pub fn final_select_on_basis<T: Scalar>(
    basis: &LagBasis<T>,
    y: &DVector<T>,
    lambda: T,
    opts: &LassoOptions,
    rank_tol: f64,
) -> Result<FinalSelection<T>> {
    let problem = LassoProblem::new(&basis.design, y)?;
    select_from_problem(&problem, &basis.design, lambda, opts, rank_tol)
}

fn select_from_problem<T: Scalar>(
    problem: &LassoProblem<T>,
    design: &DMatrix<T>,
    lambda: T,
    opts: &LassoOptions,
    rank_tol: f64,
) -> Result<FinalSelection<T>> {
    let fit = problem.solve(lambda, None, opts)?;
    if fit.active_set.is_empty() {
        return Err(GdfmError::EmptySelection {
            lambda: lambda.as_f64(),
        });
    }
    let mut kept = fit.active_set.clone();
    let mut dropped = Vec::new();
    while !gram_rank_check(&design.select_columns(&kept), rank_tol)?.is_full_rank() {
        let (pos, _) = kept
            .iter()
            .enumerate()
            .min_by(|a, b| {
                fit.coefficients[*a.1]
                    .abs()
                    .partial_cmp(&fit.coefficients[*b.1].abs())
                    .expect("finite coefficients")
            })
            .expect("non-empty selection");
        dropped.push(kept.remove(pos));
    }
    let mask = SelectionMask::from_indices(design.ncols(), &kept)?;
    Ok(FinalSelection { mask, fit, dropped })
}

/// Final basis for every listed series of a standardized panel, sharing the
/// full-sample factors and Gram matrix.
pub fn final_select_many<T: Scalar>(
    basis: &LagBasis<T>,
    responses: &DMatrix<T>,
    lambdas: &[T],
    opts: &LassoOptions,
    rank_tol: f64,
) -> Result<Vec<FinalSelection<T>>> {
    if responses.ncols() != lambdas.len() || responses.nrows() != basis.n_rows() {
        return Err(GdfmError::InvalidInput(
            "responses, penalties and design do not conform".into(),
        ));
    }
    let n = T::from_count(basis.n_rows());
    let gram = basis.design.tr_mul(&basis.design) / n;
    let xty = basis.design.tr_mul(responses) / n;
    (0..lambdas.len())
        .into_par_iter()
        .map(|q| {
            let problem = LassoProblem::from_moments(gram.clone(), xty.column(q).into_owned(), basis.n_rows())?;
            select_from_problem(&problem, &basis.design, lambdas[q], opts, rank_tol)
        })
        .collect()
}

/// Final selection for one series of a standardized panel: factors on the
/// whole sample, LASSO at the calibrated penalty.
pub fn final_select<T: Scalar>(
    panel: &Panel<T>,
    series: usize,
    r: usize,
    p: usize,
    lambda: T,
) -> Result<FinalSelection<T>> {
    if series >= panel.n_series() {
        return Err(GdfmError::InvalidInput(format!("series index {series} out of range")));
    }
    let factors = extract_factors(panel, r)?;
    let basis = build_lag_matrix(&factors.factors, p)?;
    let y = panel.values().column(series).rows(p, panel.n_obs() - p).into_owned();
    final_select_on_basis(
        &basis,
        &y,
        lambda,
        &LassoOptions::default(),
        crate::lag_design::DEFAULT_RANK_TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_design() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(40, 3, |i, j| {
            ((i * (j + 3) + 7 * j) % 11) as f64 - 5.0 + 0.1 * (i as f64).sin()
        });
        let y = DVector::from_fn(40, |i, _| x[(i, 0)] * 0.7 - x[(i, 2)] * 0.2 + (i as f64 * 1.3).cos());
        (x, y)
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y) = small_design();
        let fit = lasso_solve(&x, &y, 0.0).unwrap();
        let ols = (x.tr_mul(&x)).cholesky().unwrap().solve(&x.tr_mul(&y));
        assert!((&fit.coefficients - ols).amax() < 1e-8);
    }

    #[test]
    fn penalty_above_max_gives_empty_model() {
        let (x, y) = small_design();
        let lmax = LassoProblem::new(&x, &y).unwrap().lambda_max();
        let fit = lasso_solve(&x, &y, lmax).unwrap();
        assert!(fit.active_set.is_empty());
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn grid_endpoints() {
        let (x, y) = small_design();
        let g = penalty_grid(&x, &y, 2, 0.01).unwrap();
        let lmax = LassoProblem::new(&x, &y).unwrap().lambda_max();
        assert_eq!(g, vec![lmax, lmax * 0.01]);
        let g = penalty_grid(&x, &y, 100, 1e-3).unwrap();
        assert_eq!(g.len(), 100);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-12));
    }

    #[test]
    fn kkt_holds_along_path() {
        let (x, y) = small_design();
        let problem = LassoProblem::new(&x, &y).unwrap();
        let grid = grid_from_max(problem.lambda_max(), 20, 1e-3).unwrap();
        for fit in problem.path(&grid, &LassoOptions::default()).unwrap() {
            assert!(fit.kkt_violation < 1e-6, "kkt {}", fit.kkt_violation);
        }
    }

    #[test]
    fn non_convergence_reports_violation() {
        let (x, y) = small_design();
        let opts = LassoOptions {
            tol: 1e-30,
            max_sweeps: 3,
        };
        match LassoProblem::new(&x, &y).unwrap().solve(0.0, None, &opts) {
            Err(GdfmError::NonConvergence { sweeps, .. }) => assert!(sweeps >= 3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn ascending_grid_rejected() {
        let (x, y) = small_design();
        let problem = LassoProblem::new(&x, &y).unwrap();
        assert!(problem.path(&[0.1, 0.2], &LassoOptions::default()).is_err());
    }

    #[test]
    fn final_selection_drops_collinear_column() {
        let base = DMatrix::from_fn(50, 2, |i, j| ((i * (j + 2)) % 7) as f64 - 3.0);
        let mut x = DMatrix::zeros(50, 3);
        x.columns_mut(0, 2).copy_from(&base);
        x.set_column(2, &(base.column(0) * 1.0));
        let y = DVector::from_fn(50, |i, _| base[(i, 0)] + 0.5 * base[(i, 1)]);
        let basis = LagBasis {
            design: x,
            p: 0,
            r: 3,
            labels: crate::lag_design::lag_labels(3, 0),
        };
        let sel = final_select_on_basis(&basis, &y, 0.0, &LassoOptions::default(), 1e-10).unwrap();
        assert_eq!(sel.mask.count(), 2);
        assert!(
            gram_rank_check(&basis.design.select_columns(&sel.mask.indices()), 1e-10)
                .unwrap()
                .is_full_rank()
        );
    }
}

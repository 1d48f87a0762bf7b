//! Stacked lag regressors, singularity diagnostics and selection masks.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::sym_eigen;
use crate::error::{GdfmError, Result};
use crate::scalar::Scalar;

/// Default relative tolerance for numerical rank decisions on Gram matrices.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Label of a lag-design column, rendered as `F{factor}_L{lag}` with a
/// 1-based factor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub factor: usize,
    pub lag: usize,
}

impl fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}_L{}", self.factor, self.lag)
    }
}

impl FromStr for ColumnLabel {
    type Err = GdfmError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GdfmError::InvalidInput(format!("invalid column label '{s}'"));
        let rest = s.strip_prefix('F').ok_or_else(bad)?;
        let (factor, lag) = rest.split_once("_L").ok_or_else(bad)?;
        let factor: usize = factor.parse().map_err(|_| bad())?;
        let lag: usize = lag.parse().map_err(|_| bad())?;
        if factor == 0 {
            return Err(bad());
        }
        Ok(ColumnLabel { factor, lag })
    }
}

/// Stacked lag design: row `t` holds `(F_{t+p}', F_{t+p-1}', ..., F_t')`, so
/// the design is aligned with rows `p..T` of the source panel.
#[derive(Debug, Clone)]
pub struct LagBasis<T: Scalar> {
    pub design: DMatrix<T>,
    pub p: usize,
    pub r: usize,
    pub labels: Vec<ColumnLabel>,
}

impl<T: Scalar> LagBasis<T> {
    pub fn n_rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.design.ncols()
    }

    /// Column index of a label, if present.
    pub fn column_of(&self, label: ColumnLabel) -> Option<usize> {
        if label.factor == 0 || label.factor > self.r || label.lag > self.p {
            return None;
        }
        Some(column_index(self.r, label))
    }
}

fn column_index(r: usize, label: ColumnLabel) -> usize {
    label.lag * r + label.factor - 1
}

/// Labels of the full lag design in column order.
pub fn lag_labels(r: usize, p: usize) -> Vec<ColumnLabel> {
    (0..=p)
        .flat_map(|lag| (1..=r).map(move |factor| ColumnLabel { factor, lag }))
        .collect()
}

/// Builds the `(T-p) × r(p+1)` stacked lag matrix from a `T × r` factor
/// matrix.
pub fn build_lag_matrix<T: Scalar>(factors: &DMatrix<T>, p: usize) -> Result<LagBasis<T>> {
    let (t, r) = factors.shape();
    if r == 0 {
        return Err(GdfmError::InvalidInput("factor matrix has no columns".into()));
    }
    if p >= t {
        return Err(GdfmError::InvalidInput(format!(
            "lag order {p} must be smaller than the sample length {t}"
        )));
    }
    let rows = t - p;
    let mut design = DMatrix::zeros(rows, r * (p + 1));
    for lag in 0..=p {
        design.columns_mut(lag * r, r).copy_from(&factors.rows(p - lag, rows));
    }
    Ok(LagBasis {
        design,
        p,
        r,
        labels: lag_labels(r, p),
    })
}

/// Numerical rank diagnosis of a design's Gram matrix `X'X / rows`.
#[derive(Debug, Clone)]
pub enum GramRank<T: Scalar> {
    FullRank {
        rank: usize,
    },
    /// `kernel` holds an orthonormal basis of the numerical kernel as columns.
    Deficient {
        rank: usize,
        kernel: DMatrix<T>,
    },
}

impl<T: Scalar> GramRank<T> {
    pub fn rank(&self) -> usize {
        match self {
            GramRank::FullRank { rank } | GramRank::Deficient { rank, .. } => *rank,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        matches!(self, GramRank::FullRank { .. })
    }
}

/// Rank check of the Gram matrix of `x`: eigenvalues below
/// `tol_rel × largest` span the numerical kernel.
pub fn gram_rank_check<T: Scalar>(x: &DMatrix<T>, tol_rel: f64) -> Result<GramRank<T>> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(GdfmError::InvalidInput("design has no columns or rows".into()));
    }
    let gram = x.tr_mul(x) / T::from_count(x.nrows());
    rank_of_symmetric(&gram, tol_rel)
}

/// Same rank rule applied directly to a symmetric (Gram or covariance)
/// matrix.
pub fn rank_of_symmetric<T: Scalar>(gram: &DMatrix<T>, tol_rel: f64) -> Result<GramRank<T>> {
    let eig = sym_eigen(gram)?;
    let top = eig.eigenvalues[0].max(T::zero());
    let cut = top * T::lit(tol_rel);
    let kernel_cols: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&j| !(eig.eigenvalues[j] > cut) || top == T::zero())
        .collect();
    let rank = eig.eigenvalues.len() - kernel_cols.len();
    if kernel_cols.is_empty() {
        Ok(GramRank::FullRank { rank })
    } else {
        Ok(GramRank::Deficient {
            rank,
            kernel: eig.eigenvectors.select_columns(&kernel_cols),
        })
    }
}

/// Boolean column selection over the `r(p+1)` lag-design columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionMask {
    selected: Vec<bool>,
}

impl SelectionMask {
    pub fn new(selected: Vec<bool>) -> Self {
        Self { selected }
    }

    pub fn all(len: usize) -> Self {
        Self::new(vec![true; len])
    }

    /// Selects the contemporaneous block `F1_L0 .. Fr_L0`.
    pub fn lag0(r: usize, p: usize) -> Self {
        Self::new((0..r * (p + 1)).map(|c| c < r).collect())
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut selected = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(GdfmError::InvalidInput(format!("column {i} out of range {len}")));
            }
            selected[i] = true;
        }
        Ok(Self::new(selected))
    }

    pub fn from_labels(r: usize, p: usize, labels: &[ColumnLabel]) -> Result<Self> {
        let len = r * (p + 1);
        let idx = labels
            .iter()
            .map(|&l| {
                if l.factor == 0 || l.factor > r || l.lag > p {
                    Err(GdfmError::InvalidInput(format!("label {l} outside r={r}, p={p}")))
                } else {
                    Ok(column_index(r, l))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(len, &idx)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&b| b).count()
    }

    pub fn is_selected(&self, column: usize) -> bool {
        self.selected[column]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.selected
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn set(&mut self, column: usize, value: bool) {
        self.selected[column] = value;
    }
}

/// Design restricted to a selection mask.
#[derive(Debug, Clone)]
pub struct SelectedDesign<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub labels: Vec<ColumnLabel>,
    pub columns: Vec<usize>,
}

/// Keeps the masked columns in their original order.
pub fn apply_mask<T: Scalar>(basis: &LagBasis<T>, mask: &SelectionMask) -> Result<SelectedDesign<T>> {
    if mask.len() != basis.n_columns() {
        return Err(GdfmError::InvalidInput(format!(
            "mask length {} does not match {} design columns",
            mask.len(),
            basis.n_columns()
        )));
    }
    let columns = mask.indices();
    if columns.is_empty() {
        return Err(GdfmError::InvalidInput("selection mask selects no column".into()));
    }
    Ok(SelectedDesign {
        matrix: basis.design.select_columns(&columns),
        labels: columns.iter().map(|&c| basis.labels[c]).collect(),
        columns,
    })
}

/// The same mask for each of `n` series.
pub fn shared_masks(mask: &SelectionMask, n: usize) -> Vec<SelectionMask> {
    vec![mask.clone(); n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_lag_major_order() {
        let names: Vec<String> = lag_labels(2, 1).iter().map(ToString::to_string).collect();
        assert_eq!(names, ["F1_L0", "F2_L0", "F1_L1", "F2_L1"]);
        assert_eq!(
            "F7_L24".parse::<ColumnLabel>().unwrap(),
            ColumnLabel { factor: 7, lag: 24 }
        );
        assert!("F0_L1".parse::<ColumnLabel>().is_err());
    }

    #[test]
    fn zero_lags_is_identity() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let basis = build_lag_matrix(&f, 0).unwrap();
        assert_eq!(basis.design, f);
    }

    #[test]
    fn hand_built_one_lag() {
        let (a1, a2, b1, b2, c1, c2) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let f = DMatrix::from_row_slice(3, 2, &[a1, a2, b1, b2, c1, c2]);
        let basis = build_lag_matrix(&f, 1).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[b1, b2, a1, a2, c1, c2, b1, b2]);
        assert_eq!(basis.design, expected);
    }

    #[test]
    fn macro_panel_dimensions() {
        let f = DMatrix::<f64>::from_fn(764, 8, |i, j| (i * 31 + j * 17) as f64);
        let basis = build_lag_matrix(&f, 24).unwrap();
        assert_eq!(basis.n_columns(), 200);
        assert_eq!(basis.n_rows(), 740);
    }

    #[test]
    fn lag_order_too_large() {
        let f = DMatrix::<f64>::zeros(3, 1);
        assert!(build_lag_matrix(&f, 3).is_err());
    }

    #[test]
    fn orthonormal_design_is_full_rank() {
        let x = DMatrix::<f64>::identity(4, 4) * 2.0;
        assert!(gram_rank_check(&x, 1e-10).unwrap().is_full_rank());
    }

    #[test]
    fn duplicated_column_kernel() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0f64, 1.0, 2.0, 2.0, -1.0, -1.0]);
        match gram_rank_check(&x, 1e-10).unwrap() {
            GramRank::Deficient { rank, kernel } => {
                assert_eq!(rank, 1);
                let h = 1.0 / 2f64.sqrt();
                assert!((kernel[(0, 0)].abs() - h).abs() < 1e-12);
                assert!((kernel[(0, 0)] + kernel[(1, 0)]).abs() < 1e-12);
            }
            other => panic!("expected deficiency, got {other:?}"),
        }
    }

    #[test]
    fn masks_select_in_order() {
        let f = DMatrix::from_fn(5, 2, |i, j| (10 * i + j) as f64);
        let basis = build_lag_matrix(&f, 2).unwrap();
        let all = apply_mask(&basis, &SelectionMask::all(6)).unwrap();
        assert_eq!(all.matrix, basis.design);
        let lag0 = apply_mask(&basis, &SelectionMask::lag0(2, 2)).unwrap();
        assert_eq!(lag0.matrix, f.rows(2, 3).into_owned());
        assert!(apply_mask(&basis, &SelectionMask::new(vec![false; 6])).is_err());
    }

    #[test]
    fn mask_from_labels_round_trip() {
        let labels = ["F1_L0", "F7_L24"].map(|s| s.parse::<ColumnLabel>().unwrap());
        let mask = SelectionMask::from_labels(8, 24, &labels).unwrap();
        assert_eq!(mask.indices(), vec![0, 24 * 8 + 6]);
    }
}

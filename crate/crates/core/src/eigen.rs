//! Symmetric eigendecomposition and normalized principal components.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GdfmError, Result};
use crate::panel::Panel;
use crate::scalar::Scalar;

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Scalar> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

/// Full eigendecomposition of a symmetric matrix. The input is symmetrized as
/// `(A + A')/2` first; ties in the ordering keep the solver's index order.
pub fn sym_eigen<T: Scalar>(a: &DMatrix<T>) -> Result<SymEigen<T>> {
    if !a.is_square() {
        return Err(GdfmError::InvalidInput(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(GdfmError::InvalidInput("matrix has non-finite entries".into()));
    }
    let sym = (a + a.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let eigenvalues = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = eig.eigenvectors.select_columns(&order);
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Normalized principal-component map of a covariance matrix.
///
/// `k` is the `r × n` compression `M^{-1/2} P` and `loadings` the `n × r`
/// matrix `P' M^{1/2}`, with eigenvector signs fixed so that the leading
/// `r × r` block of `loadings` has a positive diagonal.
#[derive(Debug, Clone)]
pub struct PcMap<T: Scalar> {
    pub k: DMatrix<T>,
    pub loadings: DMatrix<T>,
    pub eigenvalues: DVector<T>,
    /// Components whose sign had to be fixed from the first nonzero entry
    /// because the diagonal entry of the leading block was exactly zero.
    pub sign_fallbacks: Vec<usize>,
}

/// Builds the normalized principal-component map for the `r` largest
/// eigenvalues of `gamma`.
pub fn pc_map<T: Scalar>(gamma: &DMatrix<T>, r: usize) -> Result<PcMap<T>> {
    let n = gamma.nrows();
    if r == 0 || r > n {
        return Err(GdfmError::InvalidInput(format!("need 1 <= r <= {n}, got r = {r}")));
    }
    let eig = sym_eigen(gamma)?;
    let top = eig.eigenvalues[0];
    let tol = top.max(T::zero()) * T::lit(1e-12);
    if !(eig.eigenvalues[r - 1] > tol) {
        let rank = eig.eigenvalues.iter().filter(|&&v| v > tol).count();
        return Err(GdfmError::RankDeficient { rank, required: r });
    }
    let mut vectors = eig.eigenvectors.columns(0, r).into_owned();
    let mut sign_fallbacks = Vec::new();
    for j in 0..r {
        let mut col = vectors.column_mut(j);
        let pivot = if col[j] != T::zero() {
            col[j]
        } else {
            sign_fallbacks.push(j);
            log::warn!(
                "zero diagonal loading for component {}; using first nonzero entry for the sign",
                j + 1
            );
            col.iter().copied().find(|v| *v != T::zero()).unwrap_or_else(T::one)
        };
        if pivot < T::zero() {
            col.neg_mut();
        }
    }
    let eigenvalues = eig.eigenvalues.rows(0, r).into_owned();
    let mut k = vectors.transpose();
    let mut loadings = vectors;
    for j in 0..r {
        let root = eigenvalues[j].sqrt();
        k.row_mut(j).iter_mut().for_each(|v| *v /= root);
        loadings.column_mut(j).iter_mut().for_each(|v| *v *= root);
    }
    Ok(PcMap {
        k,
        loadings,
        eigenvalues,
        sign_fallbacks,
    })
}

/// Second-moment matrix `Y'Y / T` of a data matrix with time in rows.
pub fn second_moment<T: Scalar>(y: &DMatrix<T>) -> DMatrix<T> {
    y.tr_mul(y) / T::from_count(y.nrows())
}

/// Estimated static factors and loadings.
#[derive(Debug, Clone)]
pub struct FactorEstimate<T: Scalar> {
    /// `T × r` normalized principal components.
    pub factors: DMatrix<T>,
    /// `n × r` loadings `P' M^{1/2}`.
    pub loadings: DMatrix<T>,
    /// The `r` leading eigenvalues of the sample covariance.
    pub eigenvalues: DVector<T>,
    /// The `r × n` compression matrix.
    pub k: DMatrix<T>,
}

impl<T: Scalar> FactorEstimate<T> {
    pub fn r(&self) -> usize {
        self.factors.ncols()
    }
}

/// Normalized principal components of a data matrix (time in rows), using
/// the uncentred second moment `Y'Y/T`.
pub fn principal_factors<T: Scalar>(y: &DMatrix<T>, r: usize) -> Result<FactorEstimate<T>> {
    let (t, n) = y.shape();
    if r == 0 || r > n.min(t) {
        return Err(GdfmError::InvalidInput(format!(
            "need 1 <= r <= min(n, T) = {}, got r = {r}",
            n.min(t)
        )));
    }
    let map = pc_map(&second_moment(y), r)?;
    let factors = y * map.k.transpose();
    Ok(FactorEstimate {
        factors,
        loadings: map.loadings,
        eigenvalues: map.eigenvalues,
        k: map.k,
    })
}

/// Extracts `r` normalized principal components from a standardized panel.
pub fn extract_factors<T: Scalar>(panel: &Panel<T>, r: usize) -> Result<FactorEstimate<T>> {
    if !panel.is_standardized() {
        return Err(GdfmError::InvalidInput(
            "factor extraction expects a standardized panel".into(),
        ));
    }
    principal_factors(panel.values(), r)
}

/// Information criteria of the Bai–Ng family for the number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InformationCriterion {
    Icp1,
    #[default]
    Icp2,
    Icp3,
}

impl InformationCriterion {
    fn penalty(self, n: usize, t: usize) -> f64 {
        let (nf, tf) = (n as f64, t as f64);
        let c = (nf + tf) / (nf * tf);
        match self {
            InformationCriterion::Icp1 => c * (nf * tf / (nf + tf)).ln(),
            InformationCriterion::Icp2 => c * (n.min(t) as f64).ln(),
            InformationCriterion::Icp3 => (n.min(t) as f64).ln() / n.min(t) as f64,
        }
    }
}

/// Outcome of [`estimate_num_factors`].
#[derive(Debug, Clone)]
pub struct FactorCount {
    pub r: usize,
    /// `(r, V(r), criterion)` for every candidate `r = 0..=r_max`.
    pub path: Vec<(usize, f64, f64)>,
}

/// Selects the number of factors minimizing `log V(r) + r * penalty(n, T)`
/// where `V(r)` is the mean squared residual after removing `r` principal
/// components.
pub fn estimate_num_factors<T: Scalar>(
    panel: &Panel<T>,
    r_max: usize,
    criterion: InformationCriterion,
) -> Result<FactorCount> {
    let (t, n) = (panel.n_obs(), panel.n_series());
    if r_max == 0 || 2 * r_max > n.min(t) {
        return Err(GdfmError::InvalidInput(format!(
            "r_max must satisfy 1 <= r_max <= min(n, T)/2 = {}, got {r_max}",
            n.min(t) / 2
        )));
    }
    let eig = sym_eigen(&second_moment(panel.values()))?;
    let values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.as_f64().max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let penalty = criterion.penalty(n, t);
    let mut removed = 0.0;
    let mut path = Vec::with_capacity(r_max + 1);
    for r in 0..=r_max {
        if r > 0 {
            removed += values[r - 1];
        }
        let v = ((total - removed) / n as f64).max(f64::MIN_POSITIVE);
        path.push((r, v, v.ln() + r as f64 * penalty));
    }
    let best = path
        .iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).expect("finite criterion"))
        .map(|p| p.0)
        .unwrap_or(0);
    Ok(FactorCount { r: best, path })
}

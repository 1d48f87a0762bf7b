//! State-space simulator for the generalised dynamic factor model.
//!
//! The state `x_t` evolves as `x_{t+1} = M x_t + G eps_{t+1}` with
//! `eps ~ N(0, I_q)` and is partitioned as `(F_t, F^w_t, rest)`: `r` strong
//! factors with identity variance, `w` weak coordinates orthogonal to `F_t`,
//! and any remaining coordinates. The common component is `chi_t = H x_t`
//! with `H_i = (Lambda_i, Lambda^w_i, 0)`, and the idiosyncratic part is a
//! cross-sectionally coupled AR(1).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{GdfmError, Result};
use crate::lag_design::{lag_labels, rank_of_symmetric, ColumnLabel, GramRank, SelectionMask};
use crate::panel::{Panel, TCode};

/// Default number of discarded leading periods.
pub const DEFAULT_BURN_IN: usize = 500;
/// Largest admissible idiosyncratic AR coefficient in absolute value.
pub const MAX_IDIO_RHO: f64 = 0.9;
/// Largest admissible nearest-neighbour coupling weight.
pub const MAX_COUPLING: f64 = 0.3;

fn invalid(msg: impl Into<String>) -> GdfmError {
    GdfmError::InvalidInput(msg.into())
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `S = M S M' + Q` by the doubling recursion.
pub fn lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || q.shape() != m.shape() {
        return Err(invalid("Lyapunov equation needs square matrices of equal size"));
    }
    let radius = spectral_radius(m);
    if !(radius < 1.0) {
        return Err(GdfmError::NonStationary { radius });
    }
    let mut a = m.clone();
    let mut s = q.clone();
    for _ in 0..200 {
        let step = &a * &s * a.transpose();
        let done = step.amax() <= f64::EPSILON * 1e-2 * s.amax().max(f64::MIN_POSITIVE);
        s += step;
        if done {
            return Ok((&s + s.transpose()) * 0.5);
        }
        a = &a * &a;
    }
    Err(GdfmError::NonConvergence {
        sweeps: 200,
        kkt_violation: f64::NAN,
    })
}

fn sym_sqrt(a: &DMatrix<f64>, inverse: bool) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&v| !(v > 1e-12 * top)) {
        return Err(GdfmError::RankDeficient {
            rank: eig.eigenvalues.iter().filter(|&&v| v > 1e-12 * top).count(),
            required: a.nrows(),
        });
    }
    let d = eig.eigenvalues.map(|v| if inverse { 1.0 / v.sqrt() } else { v.sqrt() });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Idiosyncratic design: `xi_it = rho_i xi_{i,t-1} + nu_it` with
/// `nu_it = sigma_i (u_it + c (u_{i-1,t} + u_{i+1,t}))` and `u ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdioParams {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub coupling: f64,
}

impl IdioParams {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    fn validate(&self) -> Result<()> {
        if self.rho.len() != self.sigma.len() {
            return Err(invalid("rho and sigma must have one entry per series"));
        }
        if self.rho.iter().any(|r| !(r.abs() <= MAX_IDIO_RHO)) {
            return Err(invalid(format!("idiosyncratic |rho| must not exceed {MAX_IDIO_RHO}")));
        }
        if !(0.0..=MAX_COUPLING).contains(&self.coupling) {
            return Err(invalid(format!("coupling weight must lie in [0, {MAX_COUPLING}]")));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(invalid("innovation scales must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of coupled neighbours of series `i`.
    fn neighbours(&self, i: usize) -> usize {
        let n = self.n();
        usize::from(i > 0) + usize::from(i + 1 < n)
    }

    /// `Var(nu_i) / sigma_i^2`.
    fn innovation_factor(&self, i: usize) -> f64 {
        1.0 + self.coupling * self.coupling * self.neighbours(i) as f64
    }

    /// Population variances of `xi_i`.
    pub fn variances(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.sigma[i].powi(2) * self.innovation_factor(i) / (1.0 - self.rho[i].powi(2)))
            .collect()
    }

    /// Innovation scale giving `xi_i` the population variance `var`.
    pub fn sigma_for_variance(rho: f64, coupling: f64, neighbours: usize, var: f64) -> f64 {
        (var * (1.0 - rho * rho) / (1.0 + coupling * coupling * neighbours as f64)).sqrt()
    }

    /// Population covariance matrix of `xi_t`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        let c = self.coupling;
        // Innovation covariance: B B' with B = diag(sigma)(I + c * adjacency).
        let b = DMatrix::from_fn(n, n, |i, j| {
            let w = if i == j {
                1.0
            } else if i.abs_diff(j) == 1 {
                c
            } else {
                0.0
            };
            self.sigma[i] * w
        });
        let omega = &b * b.transpose();
        DMatrix::from_fn(n, n, |i, j| omega[(i, j)] / (1.0 - self.rho[i] * self.rho[j]))
    }
}

/// Minimal state-space model with a simulated cross-section.
#[derive(Debug, Clone, Serialize)]
pub struct StateSpaceModel {
    /// `m × m` transition matrix.
    pub transition: DMatrix<f64>,
    /// `m × q` shock loading.
    pub shock_loading: DMatrix<f64>,
    /// `n × m` observation map.
    pub observation: DMatrix<f64>,
    pub r: usize,
    pub w: usize,
    pub idio: IdioParams,
}

impl StateSpaceModel {
    pub fn new(
        transition: DMatrix<f64>,
        shock_loading: DMatrix<f64>,
        observation: DMatrix<f64>,
        r: usize,
        w: usize,
        idio: IdioParams,
    ) -> Result<Self> {
        let m = transition.nrows();
        if !transition.is_square() || m == 0 {
            return Err(invalid("transition matrix must be square and non-empty"));
        }
        if shock_loading.nrows() != m || shock_loading.ncols() == 0 {
            return Err(invalid(format!("shock loading must be {m} × q with q >= 1")));
        }
        if observation.ncols() != m {
            return Err(invalid(format!("observation map must have {m} columns")));
        }
        if r == 0 || r + w > m {
            return Err(invalid(format!(
                "need 1 <= r and r + w <= m, got r = {r}, w = {w}, m = {m}"
            )));
        }
        if idio.n() != observation.nrows() {
            return Err(invalid("idiosyncratic parameters must cover every series"));
        }
        if observation.columns(r + w, m - r - w).iter().any(|v| *v != 0.0) {
            return Err(invalid(
                "observation map must vanish outside the strong and weak blocks",
            ));
        }
        idio.validate()?;
        let q = shock_loading.ncols();
        let sv = shock_loading.clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > 1e-10 * sv.amax()).count();
        if rank != q {
            return Err(GdfmError::RankDeficient { rank, required: q });
        }
        let radius = spectral_radius(&transition);
        if !(radius < 1.0) {
            return Err(GdfmError::NonStationary { radius });
        }
        Ok(StateSpaceModel {
            transition,
            shock_loading,
            observation,
            r,
            w,
            idio,
        })
    }

    pub fn m(&self) -> usize {
        self.transition.nrows()
    }

    pub fn q(&self) -> usize {
        self.shock_loading.ncols()
    }

    pub fn n(&self) -> usize {
        self.observation.nrows()
    }

    /// Stationary `Var(x_t)`.
    pub fn state_covariance(&self) -> Result<DMatrix<f64>> {
        lyapunov(
            &self.transition,
            &(&self.shock_loading * self.shock_loading.transpose()),
        )
    }

    /// `n × r` strong loadings.
    pub fn strong_loadings(&self) -> DMatrix<f64> {
        self.observation.columns(0, self.r).into_owned()
    }

    /// `n × w` weak loadings.
    pub fn weak_loadings(&self) -> DMatrix<f64> {
        self.observation.columns(self.r, self.w).into_owned()
    }

    /// Population variances of every part of each series.
    pub fn population_variances(&self) -> Result<PopulationVariances> {
        let sigma = self.state_covariance()?;
        let (r, w) = (self.r, self.w);
        let s_ss = sigma.view((0, 0), (r, r));
        let s_ww = sigma.view((r, r), (w, w));
        let lam = self.observation.columns(0, r);
        let lam_w = self.observation.columns(r, w);
        let xi = self.idio.variances();
        let n = self.n();
        let mut out = PopulationVariances {
            strong: Vec::with_capacity(n),
            weak: Vec::with_capacity(n),
            chi: Vec::with_capacity(n),
            xi,
            total: Vec::with_capacity(n),
        };
        for i in 0..n {
            let h = self.observation.row(i);
            let li = lam.row(i);
            let wi = lam_w.row(i);
            let strong = (li * s_ss * li.transpose())[(0, 0)];
            let weak = if w > 0 {
                (wi * s_ww * wi.transpose())[(0, 0)]
            } else {
                0.0
            };
            let chi = (h * &sigma * h.transpose())[(0, 0)];
            out.strong.push(strong);
            out.weak.push(weak);
            out.chi.push(chi);
            out.total.push(chi + out.xi[i]);
        }
        Ok(out)
    }

    /// Minimum-phase rank check on the model dynamics.
    pub fn check_miniphase(&self, grid_size: usize) -> Result<Miniphase> {
        check_miniphase(&self.transition, &self.shock_loading, self.r, grid_size)
    }
}

/// Population variances per series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationVariances {
    pub strong: Vec<f64>,
    pub weak: Vec<f64>,
    pub chi: Vec<f64>,
    pub xi: Vec<f64>,
    pub total: Vec<f64>,
}

impl PopulationVariances {
    pub fn weak_shares(&self) -> Vec<f64> {
        self.weak.iter().zip(&self.total).map(|(w, t)| w / t).collect()
    }

    pub fn strong_shares(&self) -> Vec<f64> {
        self.strong.iter().zip(&self.total).map(|(s, t)| s / t).collect()
    }
}

/// Raw dynamics brought to the `(F, F^w, rest)` normalization.
#[derive(Debug, Clone)]
pub struct NormalizedDynamics {
    pub transition: DMatrix<f64>,
    pub shock_loading: DMatrix<f64>,
    /// State map `x_norm = T x_raw`.
    pub transform: DMatrix<f64>,
    /// Stationary variance of the normalized state.
    pub covariance: DMatrix<f64>,
    /// Stationary variance of the raw strong block.
    pub raw_strong_covariance: DMatrix<f64>,
}

/// Rescales the first `r` raw coordinates to identity variance and replaces
/// the next `w` by their residuals after projection on the strong block:
/// `M' = T M T^{-1}`, `G' = T G`.
pub fn normalize_dynamics(
    transition: &DMatrix<f64>,
    shock_loading: &DMatrix<f64>,
    r: usize,
    w: usize,
) -> Result<NormalizedDynamics> {
    let m = transition.nrows();
    if r == 0 || r + w > m {
        return Err(invalid("need 1 <= r and r + w <= m"));
    }
    let sigma = lyapunov(transition, &(shock_loading * shock_loading.transpose()))?;
    let s = sigma.view((0, 0), (r, r)).into_owned();
    let s_inv_half = sym_sqrt(&s, true)?;
    let s_inv = &s_inv_half * &s_inv_half;
    let mut t = DMatrix::identity(m, m);
    t.view_mut((0, 0), (r, r)).copy_from(&s_inv_half);
    let proj = sigma.view((r, 0), (w, r)) * &s_inv;
    t.view_mut((r, 0), (w, r)).copy_from(&(-proj));
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| GdfmError::SingularGram("normalizing transform is singular".into()))?;
    let transition_n = &t * transition * &t_inv;
    let shock_n = &t * shock_loading;
    let cov = &t * &sigma * t.transpose();
    Ok(NormalizedDynamics {
        transition: transition_n,
        shock_loading: shock_n,
        transform: t,
        covariance: (&cov + cov.transpose()) * 0.5,
        raw_strong_covariance: s,
    })
}

/// Outcome of the minimum-phase rank check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Miniphase {
    Pass {
        /// Smallest `sigma_min / sigma_max` seen on the grid.
        min_ratio: f64,
    },
    Fail {
        z_re: f64,
        z_im: f64,
        rank: usize,
        required: usize,
    },
}

impl Miniphase {
    pub fn passed(&self) -> bool {
        matches!(self, Miniphase::Pass { .. })
    }
}

const MINIPHASE_TOL: f64 = 1e-10;
const MINIPHASE_MAX_RADIUS: f64 = 1.0 - 1e-3;

fn miniphase_matrix(transition: &DMatrix<f64>, shock: &DMatrix<f64>, r: usize, z: Complex64) -> DMatrix<Complex64> {
    let m = transition.nrows();
    let q = shock.ncols();
    DMatrix::from_fn(m + r, m + q, |i, j| {
        if i < m {
            if j < m {
                let id = if i == j { 1.0 } else { 0.0 };
                Complex64::new(id, 0.0) - z * transition[(i, j)]
            } else {
                Complex64::new(-shock[(i, j - m)], 0.0)
            }
        } else if j == i - m {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn singular_ratio(transition: &DMatrix<f64>, shock: &DMatrix<f64>, r: usize, z: Complex64) -> (f64, usize) {
    let sv = miniphase_matrix(transition, shock, r, z)
        .svd(false, false)
        .singular_values;
    let top = sv.amax();
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let rank = sv.iter().filter(|&&s| s > MINIPHASE_TOL * top).count();
    (if top > 0.0 { min / top } else { 0.0 }, rank)
}

/// Checks `rank [I - M z, -G; (I_r, 0), 0] = m + q` on a polar grid of
/// `grid_size^2` points of the open unit disk. Grid minima are refined by
/// compass search so isolated rank drops between grid points are found.
pub fn check_miniphase(
    transition: &DMatrix<f64>,
    shock: &DMatrix<f64>,
    r: usize,
    grid_size: usize,
) -> Result<Miniphase> {
    let m = transition.nrows();
    let q = shock.ncols();
    if !transition.is_square() || shock.nrows() != m || r == 0 || r > m {
        return Err(invalid("inconsistent model dimensions"));
    }
    if r < q {
        return Err(invalid(format!(
            "the rank condition needs r >= q, got r = {r}, q = {q}"
        )));
    }
    if grid_size < 2 {
        return Err(invalid("grid_size must be at least 2"));
    }
    let required = m + q;
    let mut points: Vec<(f64, Complex64)> = Vec::with_capacity(grid_size * grid_size);
    for k in 0..grid_size {
        let radius = MINIPHASE_MAX_RADIUS * k as f64 / (grid_size - 1) as f64;
        for j in 0..grid_size {
            let z = Complex64::from_polar(radius, std::f64::consts::TAU * j as f64 / grid_size as f64);
            let (ratio, rank) = singular_ratio(transition, shock, r, z);
            if rank < required {
                return Ok(Miniphase::Fail {
                    z_re: z.re,
                    z_im: z.im,
                    rank,
                    required,
                });
            }
            points.push((ratio, z));
            if k == 0 {
                break;
            }
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let min_ratio = points[0].0;
    let step0 = MINIPHASE_MAX_RADIUS / (grid_size - 1) as f64;
    for &(ratio, start) in points.iter().take(4) {
        let (mut best, mut z) = (ratio, start);
        let mut step = step0;
        while step > 1e-15 {
            let mut moved = false;
            for d in [
                Complex64::new(1.0, 0.0),
                Complex64::new(-1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
            ] {
                let cand = z + d * step;
                if cand.norm() > MINIPHASE_MAX_RADIUS {
                    continue;
                }
                let (value, rank) = singular_ratio(transition, shock, r, cand);
                if rank < required {
                    return Ok(Miniphase::Fail {
                        z_re: cand.re,
                        z_im: cand.im,
                        rank,
                        required,
                    });
                }
                if value < best {
                    best = value;
                    z = cand;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
    }
    Ok(Miniphase::Pass { min_ratio })
}

/// One simulated panel with its exact decomposition.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub y: DMatrix<f64>,
    pub chi: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub e_chi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    /// `T × r` strong factors.
    pub f: DMatrix<f64>,
    /// `T × w` weak coordinates.
    pub f_w: DMatrix<f64>,
    /// `T × m` state path.
    pub states: DMatrix<f64>,
    /// `T × q` shocks.
    pub eps: DMatrix<f64>,
    pub seed: u64,
}

impl SimulatedPanel {
    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    /// Observed panel with ids `S1..Sn` and integer ticks.
    pub fn to_panel(&self) -> Result<Panel<f64>> {
        Panel::from_matrix(self.y.clone())
    }
}

/// Draws a panel of length `t` after discarding `burn_in` periods; the
/// state and the idiosyncratic recursion both start from zero.
pub fn simulate(model: &StateSpaceModel, t: usize, seed: u64, burn_in: usize) -> Result<SimulatedPanel> {
    if t < 2 {
        return Err(invalid("at least two periods are required"));
    }
    let (m, q, n) = (model.m(), model.q(), model.n());
    let (r, w) = (model.r, model.w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::<f64>::zeros(m);
    let mut xi = DVector::<f64>::zeros(n);
    let mut eps_t = DVector::<f64>::zeros(q);
    let mut u = vec![0.0; n];
    let mut states = DMatrix::zeros(t, m);
    let mut eps = DMatrix::zeros(t, q);
    let mut xi_path = DMatrix::zeros(t, n);
    let c = model.idio.coupling;
    for step in 0..burn_in + t {
        for e in eps_t.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        x = &model.transition * &x + &model.shock_loading * &eps_t;
        for i in 0..n {
            let mut nu = u[i];
            if i > 0 {
                nu += c * u[i - 1];
            }
            if i + 1 < n {
                nu += c * u[i + 1];
            }
            xi[i] = model.idio.rho[i] * xi[i] + model.idio.sigma[i] * nu;
        }
        if step >= burn_in {
            let row = step - burn_in;
            states.row_mut(row).copy_from(&x.transpose());
            eps.row_mut(row).copy_from(&eps_t.transpose());
            xi_path.row_mut(row).copy_from(&xi.transpose());
        }
    }
    let f = states.columns(0, r).into_owned();
    let f_w = states.columns(r, w).into_owned();
    let c_part = &f * model.strong_loadings().transpose();
    let e_chi = &f_w * model.weak_loadings().transpose();
    let chi = &c_part + &e_chi;
    let y = &chi + &xi_path;
    Ok(SimulatedPanel {
        y,
        chi,
        c: c_part,
        e_chi,
        xi: xi_path,
        f,
        f_w,
        states,
        eps,
        seed,
    })
}

/// `Cov(x_t, x_{t-h}) = M^h Sigma`.
fn autocovariances(transition: &DMatrix<f64>, sigma: &DMatrix<f64>, max_lag: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(max_lag + 1);
    let mut g = sigma.clone();
    for _ in 0..=max_lag {
        let next = transition * &g;
        out.push(g);
        g = next;
    }
    out
}

/// Population second moment of the lag design `(F_t, ..., F_{t-p})` built
/// from the first `r` state coordinates, in lag-major column order.
pub fn population_lag_gram(transition: &DMatrix<f64>, sigma: &DMatrix<f64>, r: usize, p: usize) -> DMatrix<f64> {
    let gam = autocovariances(transition, sigma, p);
    let k = r * (p + 1);
    let mut out = DMatrix::zeros(k, k);
    for a in 0..=p {
        for b in 0..=p {
            // E[F_{t-a} F_{t-b}'].
            let block = if a <= b {
                gam[b - a].view((0, 0), (r, r)).into_owned()
            } else {
                gam[a - b].view((0, 0), (r, r)).transpose()
            };
            out.view_mut((a * r, b * r), (r, r)).copy_from(&block);
        }
    }
    out
}

/// `Cov(x~_t, chi_t)` as an `r(p+1) × n` matrix.
pub fn population_lag_cross(model: &StateSpaceModel, sigma: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let r = model.r;
    let gam = autocovariances(&model.transition, sigma, p);
    let mut out = DMatrix::zeros(r * (p + 1), model.n());
    for (a, g) in gam.iter().enumerate() {
        // E[F_{t-a} x_t'] = (M^a Sigma)'[0..r, :].
        let rows = g.transpose().rows(0, r) * model.observation.transpose();
        out.rows_mut(a * r, r).copy_from(&rows);
    }
    out
}

/// Greedy full-rank restriction of a lag design: while the population Gram
/// of the kept columns is singular, drop the column with non-negligible
/// weight in a kernel vector whose removal leaves the best-conditioned
/// Gram (largest smallest eigenvalue; ties go to the higher index).
pub fn oracle_mask(gram: &DMatrix<f64>, tol_rel: f64) -> Result<SelectionMask> {
    let k = gram.nrows();
    let mut keep: Vec<usize> = (0..k).collect();
    loop {
        let sub = gram.select_rows(&keep).select_columns(&keep);
        match rank_of_symmetric(&sub, tol_rel)? {
            GramRank::FullRank { .. } => break,
            GramRank::Deficient { kernel, .. } => {
                if keep.len() == 1 {
                    return Err(GdfmError::RankDeficient { rank: 0, required: 1 });
                }
                let v = kernel.column(0);
                let big = v.amax();
                let mut best: Option<(f64, usize)> = None;
                for pos in (0..keep.len()).filter(|&j| v[j].abs() > 1e-8 * big) {
                    let rest: Vec<usize> = (0..keep.len()).filter(|&j| j != pos).collect();
                    let cand = sub.select_rows(&rest).select_columns(&rest);
                    let floor = cand.symmetric_eigenvalues().min();
                    if best.is_none_or(|(b, _)| floor >= b) {
                        best = Some((floor, pos));
                    }
                }
                let (_, pos) = best.expect("kernel vector is non-zero");
                keep.remove(pos);
            }
        }
    }
    SelectionMask::from_indices(k, &keep)
}

/// Population distributed-lag coefficients of every `chi_i` on the masked
/// lag design.
#[derive(Debug, Clone)]
pub struct FdlTruth {
    pub mask: SelectionMask,
    pub labels: Vec<ColumnLabel>,
    /// One coefficient vector per series, over the masked columns.
    pub coefficients: Vec<DVector<f64>>,
    /// Population variance of `chi_i` left unexplained by the masked lags.
    pub residual_variance: Vec<f64>,
}

/// Projects each `chi_i` on the masked population lag design.
pub fn true_fdl_coefficients(model: &StateSpaceModel, p: usize, mask: &SelectionMask) -> Result<FdlTruth> {
    let sigma = model.state_covariance()?;
    let gram = population_lag_gram(&model.transition, &sigma, model.r, p);
    if mask.len() != gram.nrows() {
        return Err(invalid("mask length does not match the lag design"));
    }
    let cols = mask.indices();
    let g = gram.select_rows(&cols).select_columns(&cols);
    let chol = g
        .cholesky()
        .ok_or_else(|| GdfmError::SingularGram("population Gram of the masked design".into()))?;
    let cross = population_lag_cross(model, &sigma, p).select_rows(&cols);
    let all = lag_labels(model.r, p);
    let mut coefficients = Vec::with_capacity(model.n());
    let mut residual_variance = Vec::with_capacity(model.n());
    for i in 0..model.n() {
        let c = cross.column(i).into_owned();
        let beta = chol.solve(&c);
        let h = model.observation.row(i);
        let var_chi = (h * &sigma * h.transpose())[(0, 0)];
        residual_variance.push((var_chi - c.dot(&beta)).max(0.0));
        coefficients.push(beta);
    }
    Ok(FdlTruth {
        mask: mask.clone(),
        labels: cols.iter().map(|&c| all[c]).collect(),
        coefficients,
        residual_variance,
    })
}

/// VAR(1) factors `F_t = A F_{t-1} + B eps_t` carried in the raw state
/// `(F_t, F_{t-1})`, whose lag block is the weak block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagStateDynamics {
    /// `r × r` autoregressive matrix.
    pub a: DMatrix<f64>,
    /// `r × q` shock loading.
    pub b: DMatrix<f64>,
}

impl LagStateDynamics {
    pub fn r(&self) -> usize {
        self.a.nrows()
    }

    /// Raw `(M, G)` of the stacked state.
    pub fn raw(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = self.r();
        let mut m = DMatrix::zeros(2 * r, 2 * r);
        m.view_mut((0, 0), (r, r)).copy_from(&self.a);
        m.view_mut((r, 0), (r, r)).fill_with_identity();
        let mut g = DMatrix::zeros(2 * r, self.b.ncols());
        g.rows_mut(0, r).copy_from(&self.b);
        (m, g)
    }

    pub fn normalized(&self) -> Result<NormalizedDynamics> {
        let (m, g) = self.raw();
        normalize_dynamics(&m, &g, self.r(), self.r())
    }
}

/// Map from the normalized state to `(F_t, F_{t-1})` in normalized units.
fn lag_map(norm: &NormalizedDynamics, r: usize) -> Result<DMatrix<f64>> {
    let m = norm.transform.nrows();
    let t_inv = norm
        .transform
        .clone()
        .try_inverse()
        .ok_or_else(|| GdfmError::SingularGram("normalizing transform is singular".into()))?;
    let s_inv_half = sym_sqrt(&norm.raw_strong_covariance, true)?;
    let mut l = DMatrix::zeros(2 * r, m);
    l.view_mut((0, 0), (r, r)).fill_with_identity();
    l.rows_mut(r, r).copy_from(&(s_inv_half * t_inv.rows(r, r)));
    Ok(l)
}

/// Loadings of a group of designated series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Designated {
    /// Population variances of the strong, weak and idiosyncratic parts.
    Variances { strong: f64, weak: f64, idio: f64 },
    /// Distributed-lag coefficients on `(F_t, F_{t-1})` columns, with the
    /// population idiosyncratic variance.
    Fdl {
        coefficients: Vec<(ColumnLabel, f64)>,
        idio: f64,
    },
}

/// Cross-section design. The first `r` series are anchors loading on a
/// single strong factor each. Beyond the anchors, series `i` with
/// `(i - r) % period == 0` are designated and those with
/// `(i - r) % period == 1` are probes, each group with its own fixed
/// design. The remaining free series have strong loadings adjusted so that
/// `Lambda' Lambda / n` is exactly diagonal with descending entries, and
/// weak loadings adjusted so that `Lambda' Lambda^w = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadingDesign {
    /// Uniform range of free-series strong variances.
    pub strong_var: (f64, f64),
    /// Uniform range of free-series weak variances.
    pub weak_var: (f64, f64),
    /// Population variance of every free series before adjustment.
    pub total_var: f64,
    /// Spacing of designated and probe series; 0 disables both groups.
    pub period: usize,
    pub designated: Designated,
    pub probe: Option<Designated>,
    pub rho: f64,
    pub coupling: f64,
}

/// Complete simulation recipe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    pub dynamics: LagStateDynamics,
    pub loadings: LoadingDesign,
}

/// Model realized for a given cross-section size and seed.
#[derive(Debug, Clone)]
pub struct RealizedModel {
    pub model: StateSpaceModel,
    pub designated: Vec<usize>,
    pub probes: Vec<usize>,
    pub truth: FdlTruth,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Anchor,
    Free,
    Designated,
    Probe,
}

impl ModelSpec {
    fn role(&self, i: usize) -> Role {
        let r = self.dynamics.r();
        let period = self.loadings.period;
        if i < r {
            Role::Anchor
        } else if period == 0 {
            Role::Free
        } else if (i - r).is_multiple_of(period) {
            Role::Designated
        } else if (i - r) % period == 1 && self.loadings.probe.is_some() {
            Role::Probe
        } else {
            Role::Free
        }
    }

    /// Designated series indices for a cross-section of size `n`.
    pub fn designated_indices(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| self.role(i) == Role::Designated).collect()
    }

    /// Probe series indices for a cross-section of size `n`.
    pub fn probe_indices(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| self.role(i) == Role::Probe).collect()
    }

    /// Draws loadings and idiosyncratic scales for `n` series. The draws use
    /// their own random stream, so they depend on `seed` only.
    pub fn realize(&self, n: usize, seed: u64) -> Result<RealizedModel> {
        let r = self.dynamics.r();
        let lw = &self.loadings;
        if n < 2 * r + 2 {
            return Err(invalid(format!("need at least {} series", 2 * r + 2)));
        }
        let norm = self.dynamics.normalized()?;
        let m = 2 * r;
        let w = r;
        let s_ww = norm.covariance.view((r, r), (w, w)).into_owned();
        let lmap = lag_map(&norm, r)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);

        let weak_row = |rng: &mut ChaCha8Rng, var: f64| -> DVector<f64> {
            if var <= 0.0 {
                return DVector::zeros(w);
            }
            let dir = &s_ww * unit_vector(rng, w);
            let scale = dir.dot(&(&s_ww * &dir));
            if scale <= 1e-14 {
                DVector::zeros(w)
            } else {
                dir * (var / scale).sqrt()
            }
        };
        let fixed_row = |rng: &mut ChaCha8Rng, design: &Designated| -> Result<(DVector<f64>, f64)> {
            match design {
                Designated::Variances { strong, weak, idio } => {
                    let mut row = DVector::zeros(m);
                    row.rows_mut(0, r).copy_from(&(unit_vector(rng, r) * strong.sqrt()));
                    row.rows_mut(r, w).copy_from(&weak_row(rng, *weak));
                    Ok((row, *idio))
                }
                Designated::Fdl { coefficients, idio } => {
                    let mut beta = DVector::zeros(2 * r);
                    for (label, value) in coefficients {
                        if label.factor == 0 || label.factor > r || label.lag > 1 {
                            return Err(invalid(format!("coefficient {label} is outside the lag-1 design")));
                        }
                        beta[label.lag * r + label.factor - 1] = *value;
                    }
                    Ok(((beta.transpose() * &lmap).transpose(), *idio))
                }
            }
        };

        let roles: Vec<Role> = (0..n).map(|i| self.role(i)).collect();
        let mut h = DMatrix::zeros(n, m);
        let mut idio_var = vec![0.0; n];
        for i in 0..n {
            match roles[i] {
                Role::Designated | Role::Probe => {
                    let design = if roles[i] == Role::Designated {
                        &lw.designated
                    } else {
                        lw.probe.as_ref().expect("probe role implies a probe design")
                    };
                    let (row, idio) = fixed_row(&mut rng, design)?;
                    h.row_mut(i).copy_from(&row.transpose());
                    idio_var[i] = idio;
                }
                Role::Anchor | Role::Free => {
                    let strong = uniform(&mut rng, lw.strong_var);
                    let weak = uniform(&mut rng, lw.weak_var);
                    let l = if roles[i] == Role::Anchor {
                        let mut e = DVector::zeros(r);
                        e[i] = strong.sqrt();
                        e
                    } else {
                        unit_vector(&mut rng, r) * strong.sqrt()
                    };
                    h.view_mut((i, 0), (1, r)).copy_from(&l.transpose());
                    let wr = weak_row(&mut rng, weak);
                    h.view_mut((i, r), (1, w)).copy_from(&wr.transpose());
                    idio_var[i] = lw.total_var - strong - weak;
                    if !(idio_var[i] > 0.0) {
                        return Err(invalid("free-series variances leave no idiosyncratic part"));
                    }
                }
            }
        }

        // Free rows absorb the adjustment making Lambda' Lambda = n D.
        let free: Vec<usize> = (0..n).filter(|&i| roles[i] == Role::Free).collect();
        let fixed: Vec<usize> = (0..n).filter(|&i| roles[i] != Role::Free).collect();
        let lam = h.columns(0, r).into_owned();
        let total: f64 = lam.iter().map(|v| v * v).sum();
        let weights: Vec<f64> = (0..r).map(|j| (r - j) as f64).collect();
        let wsum: f64 = weights.iter().sum();
        let target = DMatrix::from_diagonal(&DVector::from_iterator(r, weights.iter().map(|wj| total * wj / wsum)));
        let lam_fixed = lam.select_rows(&fixed);
        let lam_free = lam.select_rows(&free);
        let needed = &target - lam_fixed.tr_mul(&lam_fixed);
        let needed_half = sym_sqrt(&needed, false)
            .map_err(|_| invalid("fixed loadings leave no room for a diagonal loading design"))?;
        let current = sym_sqrt(&lam_free.tr_mul(&lam_free), true)?;
        let adjusted = &lam_free * current * needed_half;
        for (k, &i) in free.iter().enumerate() {
            h.view_mut((i, 0), (1, r)).copy_from(&adjusted.row(k));
        }

        // Anchor and free rows absorb the adjustment making Lambda' Lambda^w = 0.
        let own: Vec<usize> = (0..n)
            .filter(|&i| matches!(roles[i], Role::Free | Role::Anchor))
            .collect();
        let lam = h.columns(0, r).into_owned();
        let cross = lam.tr_mul(&h.columns(r, w));
        let lam_own = lam.select_rows(&own);
        let gram_inv = (lam_own.tr_mul(&lam_own))
            .try_inverse()
            .ok_or_else(|| GdfmError::SingularGram("free strong loadings".into()))?;
        let correction = &lam_own * gram_inv * cross;
        for (k, &i) in own.iter().enumerate() {
            let row = h.view((i, r), (1, w)) - correction.row(k);
            h.view_mut((i, r), (1, w)).copy_from(&row);
        }

        let neighbours = |i: usize| usize::from(i > 0) + usize::from(i + 1 < n);
        let sigma: Vec<f64> = (0..n)
            .map(|i| IdioParams::sigma_for_variance(lw.rho, lw.coupling, neighbours(i), idio_var[i]))
            .collect();
        let idio = IdioParams {
            rho: vec![lw.rho; n],
            sigma,
            coupling: lw.coupling,
        };
        let model = StateSpaceModel::new(norm.transition.clone(), norm.shock_loading.clone(), h, r, w, idio)?;
        let gram = population_lag_gram(&model.transition, &norm.covariance, r, 1);
        let mask = oracle_mask(&gram, 1e-10)?;
        let truth = true_fdl_coefficients(&model, 1, &mask)?;
        Ok(RealizedModel {
            model,
            designated: self.designated_indices(n),
            probes: self.probe_indices(n),
            truth,
        })
    }
}

/// Autoregressive matrix and shock loading of the two-factor benchmark.
pub fn benchmark_dynamics() -> LagStateDynamics {
    LagStateDynamics {
        a: DMatrix::from_row_slice(2, 2, &[0.2, -0.4, 0.0, 0.6]),
        b: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
    }
}

/// Benchmark: `r = 2`, `q = 1`, `m = 4`, AR(1) idiosyncratic parts with
/// `rho = 0.5`; designated series split their variance 0.3 / 0.4 / 0.3
/// between strong, weak and idiosyncratic parts, and probe series carry a
/// small common component (0.1 strong, 0.05 weak) under unit idiosyncratic
/// variance.
pub fn benchmark() -> ModelSpec {
    ModelSpec {
        name: "benchmark".into(),
        dynamics: benchmark_dynamics(),
        loadings: LoadingDesign {
            strong_var: (0.3, 0.6),
            weak_var: (0.0, 0.1),
            total_var: 1.0,
            period: 10,
            designated: Designated::Variances {
                strong: 0.3,
                weak: 0.4,
                idio: 0.3,
            },
            probe: Some(Designated::Variances {
                strong: 0.1,
                weak: 0.05,
                idio: 1.0,
            }),
            rho: 0.5,
            coupling: 0.1,
        },
    }
}

/// Benchmark without any weak component: every lagged coefficient is zero.
pub fn benchmark_lag0_only() -> ModelSpec {
    let mut spec = benchmark();
    spec.name = "benchmark-lag0".into();
    spec.loadings.weak_var = (0.0, 0.0);
    spec.loadings.designated = Designated::Variances {
        strong: 0.3,
        weak: 0.0,
        idio: 1.0,
    };
    spec
}

/// Benchmark whose designated series have a unit `F1_L1` coefficient.
///
/// The designated series are spaced 50 apart: their loadings on the weak
/// coordinates are large, so a denser placement would make those
/// coordinates pervasive and rotate the estimated factor space.
pub fn benchmark_lagged_effect() -> ModelSpec {
    let mut spec = benchmark();
    spec.name = "benchmark-lagged".into();
    spec.loadings.period = 50;
    spec.loadings.designated = Designated::Fdl {
        coefficients: vec![(ColumnLabel { factor: 1, lag: 1 }, 1.0)],
        idio: 1.0,
    };
    spec
}

/// Eight-factor design with four shocks used to exercise the full pipeline
/// on a panel of macroeconomic size.
pub fn fred_like() -> ModelSpec {
    let r = 8;
    let a = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            0.7 - 0.06 * i as f64
        } else if j == i + 1 {
            0.1
        } else {
            0.0
        }
    });
    let b = DMatrix::from_fn(r, 4, |i, j| {
        if i % 4 == j {
            1.0
        } else if (i + 1) % 4 == j {
            0.5
        } else {
            0.0
        }
    });
    ModelSpec {
        name: "fred-like".into(),
        dynamics: LagStateDynamics { a, b },
        loadings: LoadingDesign {
            strong_var: (0.3, 0.7),
            weak_var: (0.0, 0.15),
            total_var: 1.0,
            period: 12,
            designated: Designated::Variances {
                strong: 0.3,
                weak: 0.4,
                idio: 0.3,
            },
            probe: None,
            rho: 0.5,
            coupling: 0.1,
        },
    }
}

/// Named presets.
pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "benchmark" => Ok(benchmark()),
        "benchmark-lag0" => Ok(benchmark_lag0_only()),
        "benchmark-lagged" => Ok(benchmark_lagged_effect()),
        "fred-like" => Ok(fred_like()),
        other => Err(invalid(format!(
            "unknown model '{other}' (expected benchmark, benchmark-lag0, benchmark-lagged or fred-like)"
        ))),
    }
}

/// Undoes a transformation code so that applying it to the returned levels
/// gives back `x`. Codes consuming `k` leading rows prepend `k` rows.
pub fn integrate_series(x: &[f64], tcode: TCode, start: f64) -> Vec<f64> {
    let cumsum = |v: &[f64], init: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len() + 1);
        out.push(init);
        for d in v {
            let last = *out.last().unwrap();
            out.push(last + d);
        }
        out
    };
    match tcode {
        TCode::Level => x.to_vec(),
        TCode::Diff => cumsum(x, start),
        TCode::Diff2 => {
            let d1 = cumsum(x, 0.0);
            cumsum(&d1, start)
        }
        TCode::Log => x.iter().map(|v| v.exp()).collect(),
        TCode::LogDiff => cumsum(x, start.ln()).into_iter().map(f64::exp).collect(),
        TCode::LogDiff2 => {
            let d1 = cumsum(x, 0.0);
            cumsum(&d1, start.ln()).into_iter().map(f64::exp).collect()
        }
        TCode::PctChangeDiff => {
            let growth = cumsum(x, 0.0);
            let mut out = Vec::with_capacity(growth.len() + 1);
            out.push(start);
            for g in growth {
                let last = *out.last().unwrap();
                out.push(last * (1.0 + g));
            }
            out
        }
    }
}

use gdfm::lag_design::{build_lag_matrix, gram_rank_check, rank_of_symmetric, GramRank};
use gdfm::simulator::{lyapunov, simulate, IdioParams, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `vec(S) = (I - M ⊗ M)^{-1} vec(Q)`, solved densely.
fn kronecker_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let big = DMatrix::<f64>::identity(k * k, k * k) - m.kronecker(m);
    let vec_q = DVector::from_column_slice(q.as_slice());
    let vec_s = big.lu().solve(&vec_q).expect("stable transition");
    DMatrix::from_column_slice(k, k, vec_s.as_slice())
}

/// Stacked state `(F_t, F_{t-1})` of a bivariate VAR(1) driven by one shock.
fn example_state(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m = DMatrix::zeros(4, 4);
    m.view_mut((0, 0), (2, 2)).copy_from(a);
    m.view_mut((2, 0), (2, 2)).fill_with_identity();
    let mut g = DMatrix::zeros(4, 1);
    g.view_mut((0, 0), (2, 1)).copy_from(b);
    (m, g)
}

/// Smallest angle between `v` and the column span of the orthonormal `basis`.
fn angle_to_span(v: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    let proj = basis * basis.tr_mul(v);
    (proj.norm() / v.norm()).clamp(-1.0, 1.0).acos()
}

#[test]
fn doubling_matches_kronecker_on_example_state() {
    let a = DMatrix::from_diagonal_element(2, 2, 0.5);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let (m, g) = example_state(&a, &b);
    let q = &g * g.transpose();
    let s = lyapunov(&m, &q).unwrap();
    let oracle = kronecker_lyapunov(&m, &q);
    assert!((s - oracle).amax() < 1e-12);
}

#[test]
fn example_kernel_contains_the_implied_direction() {
    let a = DMatrix::from_diagonal_element(2, 2, 0.5);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let (m, g) = example_state(&a, &b);
    let var_x = kronecker_lyapunov(&m, &(&g * g.transpose()));

    // v'b = 0 makes v'F_t - v'A F_{t-1} vanish, so (v, -A'v) spans a
    // null direction of Var(x_t); here v'(I - A) = (0, 0.5).
    let v = DVector::from_vec(vec![0.0, 1.0]);
    assert_eq!(v.dot(&b), 0.0);
    let implied = v.transpose() * (DMatrix::<f64>::identity(2, 2) - &a);
    assert_eq!(implied.as_slice(), &[0.0, 0.5]);
    let lagged = -(a.transpose() * &v);
    let direction = DVector::from_vec(vec![v[0], v[1], lagged[0], lagged[1]]);
    assert_eq!(direction.as_slice(), &[0.0, 1.0, 0.0, -0.5]);
    assert!((&var_x * &direction).amax() < 1e-14);

    let GramRank::Deficient { rank, kernel } = rank_of_symmetric(&var_x, 1e-8).unwrap() else {
        panic!("population variance should be singular");
    };
    assert_eq!(rank, 2);
    assert!(angle_to_span(&direction, &kernel) < 1e-6);
}

#[test]
fn sample_gram_of_example_is_deficient() {
    let a = DMatrix::from_diagonal_element(2, 2, 0.5);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let (m, g) = example_state(&a, &b);
    let n = 5;
    let mut obs = DMatrix::zeros(n, 4);
    for i in 0..n {
        obs[(i, 0)] = 1.0 + i as f64 * 0.1;
        obs[(i, 1)] = 0.5 - i as f64 * 0.2;
    }
    let idio = IdioParams {
        rho: vec![0.5; n],
        sigma: vec![1.0; n],
        coupling: 0.0,
    };
    let model = StateSpaceModel::new(m, g, obs, 2, 0, idio).unwrap();
    let sim = simulate(&model, 10_000, 3, 500).unwrap();
    let basis = build_lag_matrix(&sim.f, 1).unwrap();
    let GramRank::Deficient { kernel, .. } = gram_rank_check(&basis.design, 1e-8).unwrap() else {
        panic!("sample Gram should be deficient");
    };
    let direction = DVector::from_vec(vec![0.0, 1.0, 0.0, -0.5]);
    assert!(angle_to_span(&direction, &kernel) < 1e-6);
}

#[test]
fn full_shock_rank_gives_full_rank_gram() {
    let a = DMatrix::from_diagonal_element(2, 2, 0.5);
    let mut m = DMatrix::zeros(4, 4);
    m.view_mut((0, 0), (2, 2)).copy_from(&a);
    m.view_mut((2, 0), (2, 2)).fill_with_identity();
    let mut g = DMatrix::zeros(4, 2);
    g.view_mut((0, 0), (2, 2)).fill_with_identity();
    let n = 4;
    let obs = DMatrix::from_fn(n, 4, |i, j| if j < 2 { 1.0 + (i + j) as f64 * 0.3 } else { 0.0 });
    let idio = IdioParams {
        rho: vec![0.0; n],
        sigma: vec![1.0; n],
        coupling: 0.0,
    };
    let model = StateSpaceModel::new(m, g, obs, 2, 0, idio).unwrap();
    let sim = simulate(&model, 10_000, 4, 500).unwrap();
    let basis = build_lag_matrix(&sim.f, 1).unwrap();
    assert!(gram_rank_check(&basis.design, 1e-8).unwrap().is_full_rank());
}

proptest! {
    #[test]
    fn doubling_agrees_with_kronecker(
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        shocks in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let raw = DMatrix::from_row_slice(3, 3, &entries);
        let radius = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let m = if radius > 0.0 { raw * (0.9 / radius.max(0.9)) } else { raw };
        let g = DMatrix::from_row_slice(3, 2, &shocks);
        let q = &g * g.transpose();
        let s = lyapunov(&m, &q).unwrap();
        let oracle = kronecker_lyapunov(&m, &q);
        prop_assert!((&s - &oracle).amax() <= 1e-9 * oracle.amax().max(1.0));
        prop_assert!((&s - &m * &s * m.transpose() - &q).amax() <= 1e-9 * oracle.amax().max(1.0));
    }
}

use gdfm::decomposition::{static_cc, Decomposition};
use gdfm::lag_design::build_lag_matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Panel driven by lagged factors plus noise, with every series fitted by
/// OLS on the full lag design.
fn fitted(t: usize, n: usize, f: &[f64], noise: &[f64], p: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let r = 2;
    let factors = DMatrix::from_fn(t, r, |i, j| f[(i * r + j) % f.len()] + ((i + 3 * j) as f64 * 0.7).sin());
    let basis = build_lag_matrix(&factors, p).unwrap();
    let t_eff = basis.n_rows();
    let y = DMatrix::from_fn(t_eff, n, |i, k| {
        let lagged = basis.design[(i, (k % basis.n_columns()))];
        basis.design[(i, 0)] * (1.0 + k as f64 * 0.1) + 0.5 * lagged + noise[(i * n + k) % noise.len()]
    });
    let x = &basis.design;
    let beta = x.tr_mul(x).lu().solve(&x.tr_mul(&y)).unwrap();
    let chi = x * beta;
    (y, basis.design.columns(0, r).into_owned(), chi)
}

proptest! {
    #[test]
    fn parts_add_up_and_weak_part_is_orthogonal(
        f in prop::collection::vec(-2.0f64..2.0, 50..200),
        noise in prop::collection::vec(-1.0f64..1.0, 50..300),
        n in 1usize..6,
        p in 0usize..3,
    ) {
        let (y, factors, chi) = fitted(80, n, &f, &noise, p);
        let d = Decomposition::assemble(y.clone(), factors.clone(), chi).unwrap();
        prop_assert!(d.additivity_error() <= 1e-12);
        prop_assert!(d.orthogonality().amax() <= 1e-8);

        // With the contemporaneous factors in the design, projecting y or
        // chi on them gives the same static part.
        let direct = static_cc(&y, &factors).unwrap();
        prop_assert!((&direct.c_hat - &d.c_hat).amax() <= 1e-9);
    }
}

#[test]
fn lag_zero_fit_has_no_weak_part() {
    let f: Vec<f64> = (0..97).map(|i| ((i * 5) as f64).cos()).collect();
    let noise: Vec<f64> = (0..131).map(|i| ((i * 11) as f64 * 0.3).sin()).collect();
    let (y, factors, chi) = fitted(60, 3, &f, &noise, 0);
    let d = Decomposition::assemble(y, factors, chi).unwrap();
    assert!(d.e_chi_hat.amax() < 1e-10);
}

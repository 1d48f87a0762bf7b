use gdfm::lasso::{lasso_solve, LassoOptions, LassoProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn objective(gram: &DMatrix<f64>, xty: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (b.transpose() * gram * b)[(0, 0)] - xty.dot(b) + lambda * b.lp_norm(1)
}

/// Exhaustive minimiser: every support and sign pattern is solved in closed
/// form and the best sign-consistent candidate wins.
fn brute_force(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let k = x.ncols();
    let t = x.nrows() as f64;
    let gram = x.tr_mul(x) / t;
    let xty = x.tr_mul(y) / t;
    let mut best = DVector::zeros(k);
    let mut best_obj = 0.0;
    for code in 0..3usize.pow(k as u32) {
        let mut signs = vec![0i8; k];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        let support: Vec<usize> = (0..k).filter(|&j| signs[j] != 0).collect();
        if support.is_empty() {
            continue;
        }
        let g = gram.select_rows(&support).select_columns(&support);
        let rhs = DVector::from_iterator(
            support.len(),
            support.iter().map(|&j| xty[j] - lambda * signs[j] as f64),
        );
        let Some(sol) = g.lu().solve(&rhs) else { continue };
        if support
            .iter()
            .zip(sol.iter())
            .any(|(&j, &v)| v * signs[j] as f64 <= 0.0)
        {
            continue;
        }
        let mut b = DVector::zeros(k);
        for (q, &j) in support.iter().enumerate() {
            b[j] = sol[q];
        }
        let obj = objective(&gram, &xty, &b, lambda);
        if obj < best_obj {
            best_obj = obj;
            best = b;
        }
    }
    best
}

fn soft(z: f64, l: f64) -> f64 {
    z.signum() * (z.abs() - l).max(0.0)
}

fn design(t: usize, k: usize, seed: &[f64], mix: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, k, |i, j| {
        let a = seed[(i * k + j) % seed.len()];
        let b = ((i * 7 + j * 13) as f64).sin();
        a + mix * b + if j > 0 { 0.3 * seed[(i * k) % seed.len()] } else { 0.0 }
    })
}

/// Columns rescaled so that `X'X / T = I`.
fn orthonormal(t: usize, k: usize, seed: &[f64]) -> DMatrix<f64> {
    let q = design(t, k, seed, 1.0).qr().q();
    q * (t as f64).sqrt()
}

#[test]
fn fixed_case_matches_brute_force() {
    let seed: Vec<f64> = (0..97).map(|i| ((i * i) as f64 * 0.37).cos()).collect();
    let x = design(60, 4, &seed, 0.8);
    let y = DVector::from_fn(60, |i, _| x[(i, 0)] - 0.5 * x[(i, 2)] + 0.2 * ((i as f64) * 1.3).sin());
    for lambda in [0.0, 0.01, 0.05, 0.1, 0.3] {
        let fit = lasso_solve(&x, &y, lambda).unwrap();
        let oracle = brute_force(&x, &y, lambda);
        assert!((&fit.coefficients - &oracle).amax() < 1e-7, "lambda {lambda}");
    }
}

#[test]
fn long_path_from_cold_and_warm_starts_agree() {
    let seed: Vec<f64> = (0..211).map(|i| ((i * 31 % 17) as f64 * 0.71).sin()).collect();
    let (t, k) = (300, 40);
    let x = design(t, k, &seed, 0.6);
    let y = DVector::from_fn(t, |i, _| {
        (0..k).step_by(7).map(|j| x[(i, j)]).sum::<f64>() + ((i as f64) * 0.9).cos()
    });
    let prob = LassoProblem::new(&x, &y).unwrap();
    let opts = LassoOptions::default();
    let grid: Vec<f64> = (0..12).map(|g| prob.lambda_max() * 0.7f64.powi(g + 1)).collect();
    let warm = prob.path(&grid, &opts).unwrap();
    for (l, w) in grid.iter().zip(&warm) {
        let cold = prob.solve(*l, None, &opts).unwrap();
        assert!((&cold.coefficients - &w.coefficients).amax() < 1e-7);
        assert!(w.kkt_violation < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_problems_match_brute_force(
        seed in prop::collection::vec(-1.0f64..1.0, 40..80),
        noise in prop::collection::vec(-1.0f64..1.0, 50),
        k in 1usize..=4,
        frac in 0.0f64..1.2,
    ) {
        let x = design(50, k, &seed, 0.9);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)] * 0.8 + noise[i]);
        let lmax = (x.tr_mul(&y) / 50.0).amax();
        let lambda = frac * lmax;
        let fit = lasso_solve(&x, &y, lambda).unwrap();
        let oracle = brute_force(&x, &y, lambda);
        prop_assert!((&fit.coefficients - &oracle).amax() < 1e-7);
    }

    #[test]
    fn orthonormal_design_is_soft_thresholding(
        seed in prop::collection::vec(-1.0f64..1.0, 60..120),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        k in 1usize..=6,
        lambda in 0.0f64..0.5,
    ) {
        let x = orthonormal(40, k, &seed);
        let y = DVector::from_column_slice(&noise);
        let z = x.tr_mul(&y) / 40.0;
        let fit = lasso_solve(&x, &y, lambda).unwrap();
        for j in 0..k {
            prop_assert!((fit.coefficients[j] - soft(z[j], lambda)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_penalty_is_ols(
        seed in prop::collection::vec(-1.0f64..1.0, 60..120),
        noise in prop::collection::vec(-1.0f64..1.0, 80),
        k in 1usize..=6,
    ) {
        let x = design(80, k, &seed, 1.0);
        let y = DVector::from_column_slice(&noise);
        let fit = lasso_solve(&x, &y, 0.0).unwrap();
        let normal = x.tr_mul(&x).lu().solve(&x.tr_mul(&y)).unwrap();
        prop_assert!((&fit.coefficients - &normal).amax() < 1e-8);
    }

    #[test]
    fn penalty_at_or_above_max_is_empty(
        seed in prop::collection::vec(-1.0f64..1.0, 30..60),
        noise in prop::collection::vec(-1.0f64..1.0, 30),
        k in 1usize..=8,
        excess in 1.0f64..3.0,
    ) {
        let x = design(30, k, &seed, 0.5);
        let y = DVector::from_column_slice(&noise);
        let prob = LassoProblem::new(&x, &y).unwrap();
        let fit = prob.solve(prob.lambda_max() * excess, None, &LassoOptions::default()).unwrap();
        prop_assert!(fit.active_set.is_empty());
        prop_assert!(fit.coefficients.iter().all(|&b| b == 0.0));
    }
}

mod common;

use boundary_infer::basis::FunctionCoef;
use boundary_infer::gof::{beta_hat, gof_value, improvement, influence_column_full, second_derivative};
use boundary_infer::nuisance::{fit_nuisances, NuisanceConfig};
use common::{regression_instance, rng, random_vector};
use proptest::prelude::*;

#[test]
fn zero_step_is_shared_by_every_direction() {
    let (_, _, g, _) = regression_instance(1, 50, 4);
    let mut r = rng(2);
    for _ in 0..10 {
        let a = FunctionCoef(random_vector(&mut r, 4));
        assert_eq!(gof_value(&g, &a, 0.0), g.const0);
    }
}

#[test]
fn const0_is_mean_squared_residual() {
    let (data, evals, g, _) = regression_instance(3, 60, 3);
    let fits = fit_nuisances(&data, &evals, &NuisanceConfig::default()).unwrap();
    let direct = (&data.y - &fits.mu_y).map(|r| r * r).sum() / 60.0;
    assert!((g.const0 - direct).abs() < 1e-12);
}

#[test]
fn phi_columns_have_mean_zero() {
    let (_, _, g, _) = regression_instance(4, 70, 5);
    for col in g.phi.column_iter() {
        assert!(col.mean().abs() < 1e-10);
    }
}

#[test]
fn influence_column_matches_per_observation_formula() {
    let (data, evals, g, _) = regression_instance(5, 45, 3);
    let fits = fit_nuisances(&data, &evals, &NuisanceConfig::default()).unwrap();
    let mut r = rng(6);
    let a = FunctionCoef(random_vector(&mut r, 3));
    for beta in [0.0, 0.7, -1.3] {
        let got = influence_column_full(&g, &data, &evals, &fits, &a, beta).unwrap();
        let level = gof_value(&g, &a, beta);
        for i in 0..45 {
            let mut f = 0.0;
            let mut mf = 0.0;
            for j in 0..3 {
                f += a.0[j] * evals[(i, j)];
                mf += a.0[j] * fits.mu_h[(i, j)];
            }
            let res = data.y[i] - fits.mu_y[i];
            let want = (res - beta * f).powi(2) + 2.0 * beta * res * mf - level;
            assert!((got[i] - want).abs() < 1e-12 * want.abs().max(1.0));
        }
        if beta == 0.0 {
            assert!(got.mean().abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn difference_from_zero_step_is_the_quadratic(seed in 0u64..300, beta in -4.0f64..4.0) {
        let (_, _, g, _) = regression_instance(seed, 30, 3);
        let a = FunctionCoef(random_vector(&mut rng(seed + 10), 3));
        let lhs = gof_value(&g, &a, beta) - gof_value(&g, &a, 0.0);
        let rhs = beta * beta * g.curvature(&a) - 2.0 * beta * g.h2.dot(&a.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn derivatives_match_finite_differences(seed in 0u64..300, beta in -3.0f64..3.0) {
        let (_, _, g, _) = regression_instance(seed, 30, 3);
        let a = FunctionCoef(random_vector(&mut rng(seed + 20), 3));
        let h = 1e-4;
        let fd1 = (gof_value(&g, &a, beta + h) - gof_value(&g, &a, beta - h)) / (2.0 * h);
        let exact1 = 2.0 * beta * g.curvature(&a) - 2.0 * g.h2.dot(&a.0);
        prop_assert!((fd1 - exact1).abs() <= 1e-6 * exact1.abs().max(1.0));
        let fd2 = (gof_value(&g, &a, beta + h) - 2.0 * gof_value(&g, &a, beta) + gof_value(&g, &a, beta - h)) / (h * h);
        prop_assert!((fd2 - second_derivative(&g, &a)).abs() <= 1e-5 * second_derivative(&g, &a).max(1.0));
    }

    #[test]
    fn step_scales_inversely_and_minimum_is_invariant(seed in 0u64..300, c in prop_oneof![-8.0f64..-0.2, 0.2f64..8.0]) {
        let (_, _, g, _) = regression_instance(seed, 30, 3);
        let a = FunctionCoef(random_vector(&mut rng(seed + 30), 3));
        let ca = FunctionCoef(&a.0 * c);
        let b = beta_hat(&g, &a).unwrap();
        let cb = beta_hat(&g, &ca).unwrap();
        prop_assert!((cb - b / c).abs() <= 1e-10 * (b / c).abs().max(1.0));
        let m1 = gof_value(&g, &a, b);
        let m2 = gof_value(&g, &ca, cb);
        prop_assert!((m1 - m2).abs() <= 1e-10 * m1.abs().max(1.0));
    }

    #[test]
    fn minimized_quadratic_ratio(seed in 0u64..300) {
        let (_, _, g, _) = regression_instance(seed, 30, 3);
        let a = FunctionCoef(random_vector(&mut rng(seed + 40), 3));
        let h2a = g.h2.dot(&a.0);
        let lhs = improvement(&g, &a) * g.curvature(&a);
        prop_assert!((lhs - h2a * h2a).abs() <= 1e-10 * (h2a * h2a).max(1e-12));
    }
}

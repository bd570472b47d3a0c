mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sgdlab::problem::{
    batch_gradient, build_quadratic, full_gradient, generate_regression, noise_covariance_empirical, NoiseModel,
};
use sgdlab::Error;

#[test]
fn empirical_noise_is_scaled_hessian_at_truth() {
    let d = 10;
    let theta_bar = DVector::from_element(d, 1.0);
    let ds = generate_regression(1000, d, &theta_bar, 0.5, 1).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let sigma = noise_covariance_empirical(&ds, &theta_bar).unwrap();
    let target = &model.h * 0.25;
    // Diagonal entries relative to themselves, off-diagonal ones relative to
    // √(H_ii H_jj): the off-diagonal entries of H are themselves O(1/√N) noise.
    for i in 0..d {
        for j in 0..d {
            let scale = (target[(i, i)] * target[(j, j)]).sqrt();
            assert!((sigma[(i, j)] - target[(i, j)]).abs() < 0.15 * scale, "({i},{j})");
        }
    }
}

#[test]
fn empirical_noise_frobenius_error() {
    let d = 8;
    let theta_bar = DVector::from_fn(d, |i, _| (i as f64 - 3.0) / 2.0);
    let ds = generate_regression(2000, d, &theta_bar, 0.3, 5).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let sigma = noise_covariance_empirical(&ds, &theta_bar).unwrap();
    let target = &model.h * 0.09;
    assert!((&sigma - &target).norm() / target.norm() < 0.15);

    let fit = NoiseModel::empirical(&ds, &model, &theta_bar).unwrap();
    assert!(rel(fit.sigma_sq, 0.09) < 0.1);
}

#[test]
fn empirical_noise_error_shrinks_with_n() {
    let d = 6;
    let theta_bar = DVector::from_element(d, 0.5);
    let median_err = |n: usize| {
        let mut errs: Vec<f64> = (0..5u64)
            .map(|seed| {
                let ds = generate_regression(n, d, &theta_bar, 0.4, 100 + seed).unwrap();
                let h = build_quadratic(&ds, 0.0).unwrap().h * 0.16;
                let s = noise_covariance_empirical(&ds, &theta_bar).unwrap();
                (s - &h).norm() / h.norm()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs[2]
    };
    let e = [median_err(500), median_err(2000), median_err(8000)];
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
}

#[test]
fn wide_design_shape() {
    // N < d: H is rank deficient, so a ridge term is required.
    let d = 3072;
    let ds = generate_regression(64, d, &DVector::zeros(d), 1.0, 0).unwrap();
    let model = build_quadratic(&ds, 0.1).unwrap();
    assert_eq!(model.h.shape(), (d, d));
    assert_eq!(model.mu.len(), d);
    let r = (&model.h * &model.mu + &model.mu * 0.1 - &model.b).norm() / model.b.norm();
    assert!(r < 1e-10);
    match build_quadratic(&ds, 0.0) {
        Err(Error::Singular { null_direction, .. }) => {
            let v = DVector::from_vec(null_direction);
            assert!((&model.h * &v).norm() < 1e-8 * model.h.norm());
        }
        other => panic!("expected singular error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn gradient_examples() {
    let x = DMatrix::<f64>::identity(2, 2);
    let ds = sgdlab::problem::RegressionDataset::new(x, DVector::from_vec(vec![2.0, 4.0])).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let g = full_gradient(&model, &DVector::zeros(2)).unwrap();
    assert_eq!(g, DVector::from_vec(vec![-1.0, -2.0]));
    assert!(full_gradient(&model, &model.mu).unwrap().norm() < 1e-15);
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let d = 3;
    let ds = generate_regression(16, d, &DVector::from_element(d, 1.0), 0.5, 3).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let theta = DVector::zeros(d);
    let full = full_gradient(&model, &theta).unwrap();
    let mut r = rng(17);
    let mut acc = DVector::zeros(d);
    let reps = 10_000;
    for _ in 0..reps {
        let batch = rand::seq::index::sample(&mut r, ds.n(), 8).into_vec();
        acc += batch_gradient(&ds, &theta, &batch).unwrap();
    }
    acc /= reps as f64;
    assert!((&acc - &full).norm() < 0.01 * full.norm(), "{:.4}", (&acc - &full).norm() / full.norm());
}

#[test]
fn batch_gradient_full_and_singleton() {
    let ds = generate_regression(30, 4, &DVector::from_element(4, 0.3), 0.2, 8).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let theta = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
    let all: Vec<usize> = (0..30).collect();
    let g = batch_gradient(&ds, &theta, &all).unwrap();
    assert!((g - full_gradient(&model, &theta).unwrap()).norm() < 1e-12);
    let xi = ds.x().row(7).transpose();
    let single = batch_gradient(&ds, &theta, &[7]).unwrap();
    let want = &xi * (xi.dot(&theta) - ds.y()[7]);
    assert!((single - want).norm() < 1e-14);
    assert!(matches!(batch_gradient(&ds, &theta, &[]), Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_gradient_is_mean_of_sample_gradients(seed in 0u64..1000, n in 1usize..40, d in 1usize..6) {
        let mut r = rng(seed);
        let theta_bar = gaussian_vector(d, &mut r);
        let ds = generate_regression(n, d, &theta_bar, 0.3, seed).unwrap();
        let lambda = if n > d { 0.0 } else { 0.5 };
        let model = build_quadratic(&ds, lambda).unwrap();
        let theta = gaussian_vector(d, &mut r);
        let g = full_gradient(&model, &theta).unwrap();
        let mut acc = DVector::zeros(d);
        for i in 0..n {
            let xi = ds.x().row(i).transpose();
            acc += &xi * (xi.dot(&theta) - ds.y()[i]);
        }
        acc /= n as f64;
        prop_assert!((g - &acc).norm() <= 1e-12 * acc.norm().max(1.0));
    }

    #[test]
    fn ridge_solution_is_stationary(seed in 0u64..1000, lambda in 0.01f64..2.0) {
        let ds = generate_regression(20, 5, &DVector::from_element(5, 1.0), 0.5, seed).unwrap();
        let model = build_quadratic(&ds, lambda).unwrap();
        let grad = full_gradient(&model, &model.mu).unwrap() + &model.mu * lambda;
        prop_assert!(grad.norm() < 1e-10 * model.b.norm().max(1.0));
        prop_assert_eq!(&model.h, &model.h.transpose());
    }

    #[test]
    fn empirical_covariance_is_psd(seed in 0u64..1000) {
        let mut r = rng(seed);
        let ds = generate_regression(50, 4, &gaussian_vector(4, &mut r), 0.7, seed).unwrap();
        let s = noise_covariance_empirical(&ds, &gaussian_vector(4, &mut r)).unwrap();
        prop_assert_eq!(&s, &s.transpose());
        let min = s.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * s.norm());
    }
}

mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rayon::prelude::*;
use sgdlab::diffusion::{
    damping_profile, equipartition_report, estimate_sigma_tr_h, expected_global_displacement,
    expected_local_displacement, fit_power_law, msd_curve, velocity_autocorrelation, Correlation, LagUnits,
};
use sgdlab::ou_theory::{build_ou, sample_stationary_state, stationary_cross_covariance, ModeBlock, Regime};
use sgdlab::problem::{build_quadratic, generate_regression, NoiseModel, QuadraticModel};
use sgdlab::simulate::{replica_seed, BatchSampling, NoiseSource, OptimizerConfig, RunSpec, Simulator};
use sgdlab::spectral::EigenBasis;
use sgdlab::Error;

fn cfg(eta: f64, beta: f64, s: usize) -> OptimizerConfig {
    OptimizerConfig::new(eta, beta, 0.0, s).unwrap()
}

/// Model with a prescribed spectrum in a random rotation.
fn spectrum_model(values: &[f64], seed: u64) -> QuadraticModel {
    let mut r = rng(seed);
    let h = rotated(values, &mut r);
    QuadraticModel::from_parts(h, gaussian_vector(values.len(), &mut r), 0.0).unwrap()
}

fn log_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Time-averaged `‖δ‖²` after a burn-in, with idealized noise.
fn measured_delta_sq(model: &QuadraticModel, c: OptimizerConfig, source: NoiseSource, steps: usize, seed: u64) -> f64 {
    let sim = Simulator::new(model, c, source).unwrap();
    let burn = 20_000;
    let spec = RunSpec { stride: usize::MAX, ..RunSpec::new(burn + steps, model.mu.clone(), seed) };
    let rec = sim.run(&spec).unwrap();
    rec.mean_delta_sq(burn + 1)
}

#[test]
fn speed_law_example() {
    let c = cfg(0.01, 0.9, 10);
    assert!(rel(expected_local_displacement(&c, 1.0), 1e-4 / 1.9) < 1e-12);
    // σ²tr(H) = 1 with σ² = 0.5 and tr(H) = 2.
    let model = spectrum_model(&[0.8, 0.6, 0.4, 0.2], 1);
    let measured = measured_delta_sq(&model, c, NoiseSource::Idealized { sigma_sq: 0.5 }, 1_000_000, 3);
    assert!(rel(measured, 1e-4 / 1.9) < 0.05, "{measured:e}");
}

#[test]
fn speed_law_algebra() {
    let c = cfg(0.02, 0.0, 8);
    assert!(rel(expected_local_displacement(&c, 3.0), 0.02 * 0.02 * 3.0 / 8.0) < 1e-14);
    let c16 = cfg(0.02, 0.0, 16);
    assert!(rel(expected_local_displacement(&c16, 3.0), 0.5 * expected_local_displacement(&c, 3.0)) < 1e-14);
    let c = cfg(0.003, 0.95, 32);
    let x = expected_local_displacement(&c, 2.5);
    assert!(rel(estimate_sigma_tr_h(x, &c).unwrap(), 2.5) < 1e-12);
    assert!(matches!(estimate_sigma_tr_h(0.0, &c), Err(Error::Argument(_))));
    assert!(matches!(estimate_sigma_tr_h(-1.0, &c), Err(Error::Argument(_))));
}

#[test]
fn single_estimate_predicts_other_configs() {
    let d = 6;
    let ds = generate_regression(5000, d, &DVector::from_element(d, 1.0), 1.0, 2).unwrap();
    let model = build_quadratic(&ds, 0.0).unwrap();
    let src = NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::WithReplacement };
    let base = cfg(0.002, 0.9, 10);
    let estimate = estimate_sigma_tr_h(measured_delta_sq(&model, base, src, 500_000, 1), &base).unwrap();
    for other in [cfg(0.004, 0.5, 20), cfg(0.001, 0.95, 5), cfg(0.003, 0.0, 8)] {
        let predicted = expected_local_displacement(&other, estimate);
        let measured = measured_delta_sq(&model, other, src, 500_000, 2);
        assert!(rel(measured, predicted) < 0.1, "{other:?}: {measured:e} vs {predicted:e}");
    }
}

#[test]
fn autocorrelation_matches_stationary_cross_covariance() {
    let c = OptimizerConfig::new(0.01, 0.9, 0.02, 8).unwrap();
    // Spectrum spanning all three regimes at these settings (γ² ≈ 27.7).
    let rhos = [0.03, 0.1, 0.2613, 1.0, 4.0];
    let model = spectrum_model(&rhos, 4);
    let noise = NoiseModel::scaled_hessian(0.3).unwrap();
    let ou = build_ou(&model, &noise, &c, &EigenBasis::dense(&model.h, rhos.len()).unwrap()).unwrap();
    for &lag in &[0.0, 1e-3, 0.01, 0.05, 0.1, 0.5, 1.0, 3.0] {
        let blocks = stationary_cross_covariance(&ou, lag).unwrap();
        let zero = stationary_cross_covariance(&ou, 0.0).unwrap();
        for (l, m) in ou.modes.iter().enumerate() {
            let want = blocks[l][(1, 1)] / zero[l][(1, 1)];
            let got = velocity_autocorrelation(m, lag);
            assert!((got - want).abs() < 1e-10, "mode {l} lag {lag}: {got} vs {want}");
        }
    }
}

#[test]
fn autocorrelation_signs_by_regime() {
    let under = ModeBlock::from_rates(1.0, 5.0);
    assert!((0..200).any(|i| velocity_autocorrelation(&under, i as f64 * 0.05) < 0.0));
    let crit = ModeBlock::from_rates(2.0, 2.0);
    let over = ModeBlock::from_rates(5.0, 1.0);
    for b in [under, crit, over] {
        assert_eq!(velocity_autocorrelation(&b, 0.0), 1.0);
    }
    // Overdamped: one zero crossing at τ*, negative afterwards, one minimum, no oscillation.
    let tau_star = (over.alpha / over.gamma).atanh() / over.alpha;
    let grid: Vec<f64> = (1..=2000).map(|i| i as f64 * 20.0 / over.gamma / 2000.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| velocity_autocorrelation(&over, t)).collect();
    for (t, v) in grid.iter().zip(&vals) {
        if *t < tau_star * (1.0 - 1e-9) {
            assert!(*v > 0.0);
        } else if *t > tau_star * (1.0 + 1e-9) {
            assert!(*v < 0.0);
        }
    }
    let turns = vals.windows(3).filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0).count();
    assert_eq!(turns, 1);
}

#[test]
fn global_displacement_reduces_to_local_at_one_step() {
    let c = cfg(0.02, 0.8, 4);
    let rhos = [2.0, 0.5, 0.1];
    let local = expected_local_displacement(&c, 0.7 * 2.6);
    for units in [LagUnits::Continuous, LagUnits::Steps] {
        let g = expected_global_displacement(&rhos, &c, 0.7, 1, units).unwrap();
        assert!(rel(g, local) < 1e-12);
        let curve = msd_curve(&rhos, &c, 0.7, 50, Correlation::Modal(units));
        for t in [1usize, 7, 50] {
            let direct = expected_global_displacement(&rhos, &c, 0.7, t, units).unwrap();
            assert!(rel(curve[t - 1].1, direct) < 1e-10);
        }
    }
    assert!(expected_global_displacement(&rhos, &c, 0.7, 0, LagUnits::Continuous).is_err());
}

#[test]
fn hypothetical_correlations_give_brownian_and_ballistic_exponents() {
    let c = cfg(0.01, 0.9, 8);
    let rhos = log_spaced(10, 0.1, 3.0);
    let zero = msd_curve(&rhos, &c, 1.0, 3000, Correlation::Zero);
    let one = msd_curve(&rhos, &c, 1.0, 3000, Correlation::One);
    let c0 = fit_power_law(&zero, 1.0 / 3.0).unwrap().exponent;
    let c1 = fit_power_law(&one, 1.0 / 3.0).unwrap().exponent;
    assert!((c0 - 1.0).abs() < 0.01, "{c0}");
    assert!((c1 - 2.0).abs() < 0.02, "{c1}");
}

#[test]
fn critical_single_mode_is_near_brownian() {
    let c = cfg(2.0, 0.0, 1);
    let profile = damping_profile(&[0.25], &c);
    assert!((profile[0].0 - 1.0).abs() < 1e-12);
    assert_eq!(profile[0].1, Regime::Critical);
    let curve = msd_curve(&[0.25], &c, 1.0, 2000, Correlation::Modal(LagUnits::Continuous));
    let fit = fit_power_law(&curve, 1.0 / 3.0).unwrap();
    assert!((0.95..=1.05).contains(&fit.exponent), "{}", fit.exponent);
}

#[test]
fn power_law_fit_examples() {
    let exact: Vec<(f64, f64)> = (1..=100).map(|t| (t as f64, 3.0 * (t * t) as f64)).collect();
    let fit = fit_power_law(&exact, 1.0 / 3.0).unwrap();
    assert!((fit.exponent - 2.0).abs() < 1e-10);
    assert!((fit.amplitude - 3.0).abs() < 1e-9);
    let mut bad = exact.clone();
    bad[90].1 = 0.0;
    assert!(matches!(fit_power_law(&bad, 1.0 / 3.0), Err(Error::Fit(_))));
    assert!(matches!(fit_power_law(&exact[..12], 0.5), Err(Error::Fit(_))));
}

#[test]
fn damping_trends() {
    let rhos = log_spaced(8, 0.01, 10.0);
    let mut prev: Option<Vec<f64>> = None;
    for eta in [1e-4, 1e-3, 1e-2, 1e-1] {
        let z: Vec<f64> = damping_profile(&rhos, &cfg(eta, 0.9, 8)).iter().map(|p| p.0).collect();
        for w in z.windows(2) {
            assert!(w[1] < w[0]);
        }
        if let Some(p) = prev {
            assert!(z.iter().zip(&p).all(|(a, b)| a < b));
        }
        prev = Some(z);
    }
}

/// Replica average of `‖θ_t − θ_0‖²` from stationary starts.
fn ensemble_msd(
    model: &QuadraticModel,
    noise: &NoiseModel,
    c: OptimizerConfig,
    horizon: usize,
    replicas: u64,
) -> Vec<f64> {
    let ou = build_ou(model, noise, &c, &EigenBasis::dense(&model.h, model.dim()).unwrap()).unwrap();
    let sim = Simulator::new(model, c, NoiseSource::Idealized { sigma_sq: noise.sigma_sq }).unwrap();
    let runs: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let seed = replica_seed(99, i);
            let (theta0, v0) = sample_stationary_state(&ou, seed ^ 1).unwrap();
            let spec = RunSpec { stride: usize::MAX, v0: Some(v0), ..RunSpec::new(horizon, theta0, seed) };
            sim.run(&spec).unwrap().big_delta_sq
        })
        .collect();
    (0..=horizon).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / replicas as f64).collect()
}

#[test]
fn global_displacement_matches_stationary_ensemble() {
    let c = cfg(0.002, 0.9, 8);
    let rhos = log_spaced(10, 0.02, 1.0);
    let model = spectrum_model(&rhos, 7);
    let noise = NoiseModel::scaled_hessian(1.0).unwrap();
    let horizon = 10_000;
    let msd = ensemble_msd(&model, &noise, c, horizon, 200);
    let cont = msd_curve(&rhos, &c, 1.0, horizon, Correlation::Modal(LagUnits::Continuous));
    let steps = msd_curve(&rhos, &c, 1.0, horizon, Correlation::Modal(LagUnits::Steps));
    let mut worst_steps = 0.0f64;
    for t in [1usize, 3, 10, 30, 100, 300, 1000, 3000, 10_000] {
        let e = rel(msd[t], cont[t - 1].1);
        assert!(e < 0.1, "t = {t}: {} vs {}", msd[t], cont[t - 1].1);
        worst_steps = worst_steps.max(rel(msd[t], steps[t - 1].1));
    }
    // Step-unit lags do not describe the simulation.
    assert!(worst_steps > 0.5, "{worst_steps}");
}

#[test]
fn fitted_exponent_grows_with_window_start() {
    // Stiff modes saturate within a step; one soft direction starts far from
    // the minimum and drifts back. The log-log curve bends upward over the run.
    let d = 11;
    let mut rhos = vec![1.0; d - 1];
    rhos.push(5e-7);
    let h = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(rhos));
    let model = QuadraticModel::from_parts(h, DVector::zeros(d), 0.0).unwrap();
    let c = cfg(1.0, 0.0, 4);
    let sim = Simulator::new(&model, c, NoiseSource::Idealized { sigma_sq: 1.0 }).unwrap();
    let horizon = 20_000;
    let mut theta0 = DVector::zeros(d);
    theta0[d - 1] = 275.0;
    let replicas = 64u64;
    let runs: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let spec = RunSpec { stride: usize::MAX, ..RunSpec::new(horizon, theta0.clone(), replica_seed(5, i)) };
            sim.run(&spec).unwrap().big_delta_sq
        })
        .collect();
    let curve: Vec<(f64, f64)> = (1..=horizon)
        .map(|t| (t as f64, runs.iter().map(|r| r[t]).sum::<f64>() / replicas as f64))
        .collect();
    let cs: Vec<f64> = (1..=9)
        .map(|i| fit_power_law(&curve, i as f64 / 10.0).unwrap().exponent)
        .collect();
    for w in cs.windows(2) {
        assert!(w[1] >= w[0], "{cs:?}");
    }
    assert!(cs[0] > 0.5 && cs[8] < 2.0, "{cs:?}");
}

#[test]
fn beta_raises_and_batch_size_leaves_the_analytic_exponent() {
    let rhos = log_spaced(5, 1.0, 6.0);
    let c_of = |beta: f64, s: usize| {
        let curve = msd_curve(&rhos, &cfg(1e-6, beta, s), 1.0, 300, Correlation::Modal(LagUnits::Continuous));
        fit_power_law(&curve, 1.0 / 3.0).unwrap().exponent
    };
    let cs: Vec<f64> = [0.8, 0.9, 0.95, 0.99].iter().map(|&b| c_of(b, 8)).collect();
    for w in cs.windows(2) {
        assert!(w[1] > w[0], "{cs:?}");
    }
    for s in [1, 32, 512] {
        assert!((c_of(0.9, s) - c_of(0.9, 8)).abs() < 1e-10);
    }
}

#[test]
fn equipartition_closed_form_and_simulation() {
    let mut r = rng(13);
    let lambda = 0.05;
    let h = rotated(&[1.5, 0.8, 0.4, 0.2], &mut r);
    let model = QuadraticModel::from_parts(h, gaussian_vector(4, &mut r), lambda).unwrap();
    let noise = NoiseModel::scaled_hessian(0.4).unwrap();
    let c = OptimizerConfig::new(0.005, 0.9, lambda, 8).unwrap();
    let rep = equipartition_report(&model, &noise, &c);
    let half_mu = 0.5 * lambda * model.mu.norm_squared();
    assert!((rep.expected_loss - rep.expected_kinetic - half_mu).abs() < 1e-12 * rep.expected_loss.max(1.0));
    let kin = c.eta * 0.4 * model.h.trace() / (4.0 * 8.0 * 0.1);
    assert!(rel(rep.expected_kinetic, kin) < 1e-12);

    let sim = Simulator::new(&model, c, NoiseSource::Idealized { sigma_sq: 0.4 }).unwrap();
    let (mut loss, mut kinetic, mut n) = (0.0, 0.0, 0.0);
    let burn = 20_000;
    let spec = RunSpec { stride: usize::MAX, ..RunSpec::new(burn + 500_000, model.mu.clone(), 4) };
    sim.run_observed(&spec, |k, s| {
        if k >= burn {
            loss += model.regularized_excess_loss(&s.theta);
            kinetic += 0.5 * c.mass() * s.v.norm_squared();
            n += 1.0;
        }
    })
    .unwrap();
    assert!(rel(loss / n, rep.expected_loss) < 0.1);
    assert!(rel(kinetic / n, rep.expected_kinetic) < 0.1);
    assert!(rel(loss / n - kinetic / n, half_mu) < 0.1 || (loss / n - kinetic / n - half_mu).abs() < 0.1 * rep.expected_loss);

    let no_decay = QuadraticModel::from_parts(model.h.clone(), model.b.clone(), 0.0).unwrap();
    let rep0 = equipartition_report(&no_decay, &noise, &cfg(0.005, 0.9, 8));
    assert!((rep0.expected_loss - rep0.expected_kinetic).abs() < 1e-15 * rep0.expected_loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn msd_curve_is_nonnegative_and_starts_at_local(
        eta in 1e-4f64..0.1,
        beta in 0.0f64..0.99,
        s in 1usize..64,
        lo in 0.01f64..1.0,
    ) {
        let c = cfg(eta, beta, s);
        let rhos = log_spaced(4, lo, lo * 20.0);
        let curve = msd_curve(&rhos, &c, 0.5, 200, Correlation::Modal(LagUnits::Continuous));
        prop_assert!(curve.iter().all(|&(_, v)| v >= 0.0 && v.is_finite()));
        let local = expected_local_displacement(&c, 0.5 * rhos.iter().sum::<f64>());
        prop_assert!(rel(curve[0].1, local) < 1e-12);
    }

    #[test]
    fn autocorrelation_is_bounded(gamma in 0.01f64..100.0, omega in 0.01f64..100.0, lag in 0.0f64..50.0) {
        let b = ModeBlock::from_rates(gamma, omega);
        let v = velocity_autocorrelation(&b, lag);
        prop_assert!(v.is_finite() && v.abs() <= 1.0 + 1e-12);
    }
}

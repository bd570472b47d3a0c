//! Stationary step size: E‖θ_{k+1} − θ_k‖² = η²σ²tr(H) / (S(1−β²)).
//! One measurement predicts the others.
//!
//! ```bash
//! cargo run --release --example speed_law
//! ```

use nalgebra::{DMatrix, DVector};
use sgdlab::diffusion::{estimate_sigma_tr_h, expected_local_displacement};
use sgdlab::ou_theory::{build_ou, sample_stationary_state};
use sgdlab::problem::{NoiseModel, QuadraticModel};
use sgdlab::simulate::{NoiseSource, OptimizerConfig, RunSpec, Simulator};
use sgdlab::spectral::EigenBasis;

fn measure(model: &QuadraticModel, noise: &NoiseModel, cfg: OptimizerConfig, steps: usize) -> sgdlab::Result<f64> {
    let full = EigenBasis::dense(&model.h, model.dim())?;
    let ou = build_ou(model, noise, &cfg, &full)?;
    let (theta0, v0) = sample_stationary_state(&ou, 3)?;
    let sim = Simulator::new(model, cfg, NoiseSource::Idealized { sigma_sq: noise.sigma_sq })?;
    let mut spec = RunSpec::new(steps, theta0, 5);
    spec.v0 = Some(v0);
    Ok(sim.run(&spec)?.mean_delta_sq(1))
}

fn main() -> sgdlab::Result<()> {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.5, 1.0, 0.5]));
    let model = QuadraticModel::from_parts(h, DVector::zeros(5), 0.0)?;
    let noise = NoiseModel::scaled_hessian(1.0)?;
    let sigma_tr_h = noise.sigma_sq * model.h.trace();

    let reference = OptimizerConfig::new(0.01, 0.9, 0.0, 16)?;
    let measured = measure(&model, &noise, reference, 200_000)?;
    let estimate = estimate_sigma_tr_h(measured, &reference)?;
    println!("sigma^2 tr H: true {sigma_tr_h:.4}, estimated {estimate:.4}");

    println!("\n{:>6} {:>6} {:>12} {:>12} {:>12}", "eta", "beta", "measured", "predicted", "cross");
    for eta in [0.005, 0.02] {
        for beta in [0.5, 0.95] {
            let cfg = OptimizerConfig::new(eta, beta, 0.0, 16)?;
            let m = measure(&model, &noise, cfg, 200_000)?;
            println!(
                "{eta:>6} {beta:>6} {m:>12.4e} {:>12.4e} {:>12.4e}",
                expected_local_displacement(&cfg, sigma_tr_h),
                expected_local_displacement(&cfg, estimate)
            );
        }
    }
    Ok(())
}

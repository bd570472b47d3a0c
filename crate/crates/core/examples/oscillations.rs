//! Linear regression trained with heavy-ball SGD: the top-eigenmode
//! projection of the trajectory follows the closed-form damped oscillator.
//!
//! ```bash
//! cargo run --release --example oscillations
//! ```

use nalgebra::DVector;
use sgdlab::ou_theory::{build_ou, mode_mean};
use sgdlab::problem::{build_quadratic, generate_regression_scaled, NoiseModel};
use sgdlab::signal::dominant_frequency;
use sgdlab::simulate::{BatchSampling, NoiseSource, OptimizerConfig, RunSpec, Simulator};
use sgdlab::spectral::subspace_iteration;

fn main() -> sgdlab::Result<()> {
    let (n, d, sigma) = (51_200, 20, 0.1);
    // Column variances from 2240 down to 100, log-spaced.
    let scales: Vec<f64> = (0..d)
        .map(|j| (2240f64.ln() + j as f64 / (d - 1) as f64 * (100f64.ln() - 2240f64.ln())).exp().sqrt())
        .collect();
    let ds = generate_regression_scaled(n, &DVector::from_element(d, 1.0), sigma, Some(&scales), 7)?;
    let model = build_quadratic(&ds, 0.0)?;
    let basis = subspace_iteration(&model, 2, 10, 1e-12, 7)?;
    let noise = NoiseModel::scaled_hessian(sigma * sigma)?;
    println!("rho_1 = {:.1}, rho_2 = {:.1}", basis.values[0], basis.values[1]);

    for beta in [0.9, 0.99] {
        let cfg = OptimizerConfig::new(1e-5, beta, 0.0, 512)?;
        let ou = build_ou(&model, &noise, &cfg, &basis)?;
        let sim = Simulator::new(&model, cfg, NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::EpochShuffled })?;
        let mut spec = RunSpec::new(400, DVector::zeros(d), 1);
        spec.basis = Some(basis.clone());
        let traj = sim.run(&spec)?;
        let proj = traj.projections.as_ref().unwrap();
        let (a0, b0) = (proj.a[(0, 0)], proj.b[(0, 0)]);

        println!("\nbeta = {beta}: gamma = {:.1}, omega_1 = {:.1}", cfg.gamma(), ou.modes[0].omega);
        println!("{:>6} {:>12} {:>12}", "step", "a_1 sim", "a_1 theory");
        for step in (0..=120).step_by(6) {
            let (a, _) = mode_mean(&ou.modes[0], a0, b0, cfg.eta * step as f64)?;
            println!("{step:>6} {:>12.5} {:>12.5}", proj.a[(step, 0)], a);
        }
        let a1: Vec<f64> = proj.a.column(0).iter().copied().collect();
        if let Some(peak) = dominant_frequency(&a1, cfg.eta) {
            let f = ou.modes[0].omega / (2.0 * std::f64::consts::PI);
            println!("FFT peak {:.1} Hz vs omega_1/2pi = {:.1} Hz (bin width {:.1})", peak.frequency, f, peak.resolution);
        }
    }
    Ok(())
}

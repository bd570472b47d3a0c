//! At stationarity the expected regularized loss equals the expected kinetic
//! energy (mass η(1+β)/2) plus (λ/2)‖μ‖².
//!
//! ```bash
//! cargo run --release --example equipartition
//! ```

use nalgebra::{DMatrix, DVector};
use sgdlab::diffusion::equipartition_report;
use sgdlab::ou_theory::{build_ou, sample_stationary_state};
use sgdlab::problem::{NoiseModel, QuadraticModel};
use sgdlab::simulate::{NoiseSource, OptimizerConfig, RunSpec, Simulator};
use sgdlab::spectral::EigenBasis;

fn main() -> sgdlab::Result<()> {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 1.0]));
    let b = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let cfg = OptimizerConfig::new(0.005, 0.9, 0.1, 8)?;
    let model = QuadraticModel::from_parts(h, b, cfg.lambda)?;
    let noise = NoiseModel::scaled_hessian(1.0)?;

    let report = equipartition_report(&model, &noise, &cfg);
    println!("closed form: {report:#?}");
    println!("(lambda/2)|mu|^2 = {:.6e}", 0.5 * cfg.lambda * model.mu.norm_squared());

    let ou = build_ou(&model, &noise, &cfg, &EigenBasis::dense(&model.h, 3)?)?;
    let (theta0, v0) = sample_stationary_state(&ou, 1)?;
    let sim = Simulator::new(&model, cfg, NoiseSource::Idealized { sigma_sq: noise.sigma_sq })?;
    let mut spec = RunSpec::new(400_000, theta0, 2);
    spec.v0 = Some(v0);
    let (mut loss, mut kinetic, mut count) = (0.0, 0.0, 0usize);
    sim.run_observed(&spec, |_, s| {
        loss += model.regularized_excess_loss(&s.theta);
        kinetic += 0.5 * cfg.mass() * s.v.norm_squared();
        count += 1;
    })?;
    println!("\nsimulated: loss {:.6e}, kinetic {:.6e}", loss / count as f64, kinetic / count as f64);
    Ok(())
}

//! Mean squared displacement from the modal velocity correlations, and the
//! exponent c of a power-law fit E‖θ_t − θ_0‖² ∝ t^c.
//!
//! ```bash
//! cargo run --release --example anomalous_diffusion
//! ```

use sgdlab::diffusion::{damping_profile, fit_power_law, msd_curve, Correlation, LagUnits, RegimeCounts};
use sgdlab::simulate::OptimizerConfig;

fn main() -> sgdlab::Result<()> {
    let spectrum: Vec<f64> = (0..5).map(|i| 1.0 + 1.25 * i as f64).collect();
    let horizon = 300;

    for (label, corr) in [("uncorrelated", Correlation::Zero), ("fully correlated", Correlation::One)] {
        let cfg = OptimizerConfig::new(1e-3, 0.9, 0.0, 32)?;
        let fit = fit_power_law(&msd_curve(&spectrum, &cfg, 1.0, horizon, corr), 1.0 / 3.0)?;
        println!("{label:>18}: c = {:.4}", fit.exponent);
    }

    println!("\nmomentum sweep at eta = 1e-6");
    for beta in [0.8, 0.9, 0.95, 0.99] {
        let cfg = OptimizerConfig::new(1e-6, beta, 0.0, 32)?;
        let curve = msd_curve(&spectrum, &cfg, 1.0, horizon, Correlation::Modal(LagUnits::Continuous));
        let fit = fit_power_law(&curve, 1.0 / 3.0)?;
        let counts = RegimeCounts::tally(&damping_profile(&spectrum, &cfg));
        println!("  beta = {beta:<5} c = {:.4}  {counts:?}", fit.exponent);
    }

    println!("\nlearning-rate sweep at beta = 0.9");
    for eta in [1e-4, 1e-3, 1e-2, 1e-1] {
        let cfg = OptimizerConfig::new(eta, 0.9, 0.0, 32)?;
        let curve = msd_curve(&spectrum, &cfg, 1.0, horizon, Correlation::Modal(LagUnits::Continuous));
        let fit = fit_power_law(&curve, 1.0 / 3.0)?;
        let counts = RegimeCounts::tally(&damping_profile(&spectrum, &cfg));
        println!("  eta = {eta:<7} c = {:.4}  {counts:?}", fit.exponent);
    }
    Ok(())
}

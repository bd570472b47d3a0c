//! Exact Gaussian draws of the phase state at any time, checked against the
//! closed-form per-mode covariance.
//!
//! ```bash
//! cargo run --release --example exact_sampler
//! ```

use nalgebra::{DMatrix, DVector};
use sgdlab::ou_theory::{build_ou, cross_covariance, mean, sample_exact, variance};
use sgdlab::problem::{NoiseModel, QuadraticModel};
use sgdlab::simulate::OptimizerConfig;
use sgdlab::spectral::EigenBasis;

fn main() -> sgdlab::Result<()> {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
    let model = QuadraticModel::from_parts(h.clone(), DVector::from_vec(vec![1.0, 1.0]), 0.0)?;
    let cfg = OptimizerConfig::new(0.05, 0.9, 0.0, 4)?;
    let ou = build_ou(&model, &NoiseModel::scaled_hessian(1.0)?, &cfg, &EigenBasis::dense(&h, 2)?)?;
    for (l, m) in ou.modes.iter().enumerate() {
        println!("mode {}: rho = {}, zeta = {:.3}, {:?}", l + 1, m.rho, m.zeta, m.regime);
    }

    let theta0 = DVector::zeros(2);
    let v0 = DVector::zeros(2);
    let t = 0.5;
    let samples = sample_exact(&ou, &theta0, &v0, t, 200_000, 42)?;
    let m = mean(&ou, &theta0, &v0, t)?;
    let emp_mean = DVector::from_fn(4, |j, _| samples.column(j).mean());
    println!("\nmean at t = {t}: closed {:.4?}, sampled {:.4?}", m.as_slice(), emp_mean.as_slice());

    let var = variance(&ou, t)?;
    for (l, block) in var.iter().enumerate() {
        // Basis vectors are coordinate axes here, so columns l and 2 + l are a_l and b_l.
        let a = samples.column(l).map(|x| x - m[l]);
        let b = samples.column(2 + l).map(|x| x - m[2 + l]);
        let n = a.len() as f64;
        println!(
            "mode {}: var_aa {:.4e} / {:.4e}, var_bb {:.4e} / {:.4e}",
            l + 1,
            block[(0, 0)],
            a.norm_squared() / n,
            block[(1, 1)],
            b.norm_squared() / n
        );
    }

    let cross = cross_covariance(&ou, 0.5, 0.7)?;
    println!("\nCov(x(0.5), x(0.7)) for mode 1:\n{:.4e}", cross[0]);
    Ok(())
}

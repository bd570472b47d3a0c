//! The stationary law of SGD is governed by a modified loss, not the training
//! loss: its position part is isotropic when λ = 0, and the probability
//! current circulates along its level sets.
//!
//! ```bash
//! cargo run --release --example modified_loss
//! ```

use nalgebra::{DMatrix, DVector};
use sgdlab::decomposition::{closed_form_qu, kwon_decompose, stationarity_certificate, Restriction};
use sgdlab::problem::{NoiseModel, QuadraticModel};
use sgdlab::simulate::OptimizerConfig;
use sgdlab::spectral::EigenBasis;

fn main() -> sgdlab::Result<()> {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![6.0, 3.0, 2.0, 1.0]));
    let model = QuadraticModel::from_parts(h.clone(), DVector::from_element(4, 1.0), 0.0)?;
    let noise = NoiseModel::scaled_hessian(0.25)?;
    let cfg = OptimizerConfig::new(0.01, 0.9, 0.0, 32)?;

    let dec = closed_form_qu(&model, &noise, &cfg, Restriction::Full)?;
    let cert = stationarity_certificate(&dec, 100, 0);
    println!("{cert:#?}");

    // Same thing from the generic route: Lyapunov solve, then Q and U.
    let kwon = kwon_decompose(&dec.drift, &dec.diffusion)?;
    println!("|U_kwon - U_closed| / |U_closed| = {:.2e}", (&kwon.u - &dec.u).norm() / dec.u.norm());

    let basis = EigenBasis::dense(&h, 4)?;
    let plane = closed_form_qu(&model, &noise, &cfg, Restriction::Basis(&basis))?;
    let diag: Vec<f64> = (0..4).map(|l| plane.u[(l, l)]).collect();
    println!("training loss curvature: {:?}", basis.values.as_slice());
    println!("modified loss position curvature: {diag:.4?}");

    // Current on the (a_1, b_1) plane: tangent to level sets of Psi.
    println!("\n{:>8} {:>8} {:>12} {:>12}", "a_1", "b_1", "j_a", "j_b");
    for (a, b) in [(0.1, 0.0), (0.0, 0.1), (-0.1, 0.0), (0.0, -0.1)] {
        let mut x = DVector::zeros(8);
        x[0] = a;
        x[4] = b;
        let j = plane.current(&x);
        println!("{a:>8} {b:>8} {:>12.3e} {:>12.3e}", j[0], j[4]);
    }
    Ok(())
}

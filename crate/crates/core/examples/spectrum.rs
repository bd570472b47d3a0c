//! Top Hessian eigenpairs from Hessian-vector products only.
//!
//! ```bash
//! cargo run --release --example spectrum
//! ```

use nalgebra::DVector;
use sgdlab::problem::{generate_regression_scaled, sorted_symmetric_eigen};
use sgdlab::spectral::{subspace_iteration_with, SubspaceIteration, SubspaceOptions};

fn main() -> sgdlab::Result<()> {
    let d = 40;
    let scales: Vec<f64> = (0..d).map(|j| 1.1f64.powi(-(j as i32)).sqrt() * 3.0).collect();
    let ds = generate_regression_scaled(4000, &DVector::from_element(d, 1.0), 0.5, Some(&scales), 1)?;

    // The dataset is itself a Hessian operator: v ↦ XᵀXv / N.
    let mut it = SubspaceIteration::new(&ds, SubspaceOptions::new(10))?;
    for _ in 0..10 {
        it.step();
        println!("sweep {:>2}: max residual {:.2e}", it.iters(), it.residuals().max());
    }
    let basis = it.finish();

    let h = ds.x().tr_mul(ds.x()) / ds.n() as f64;
    let (dense, _) = sorted_symmetric_eigen(&h);
    println!("\n{:>3} {:>14} {:>14} {:>10}", "i", "subspace", "dense", "rel err");
    for i in 0..basis.k() {
        println!("{:>3} {:>14.8} {:>14.8} {:>10.2e}", i + 1, basis.values[i], dense[i], (basis.values[i] - dense[i]).abs() / dense[i]);
    }

    let opts = SubspaceOptions { k: 5, seed: 9, ..SubspaceOptions::new(5) };
    let again = subspace_iteration_with(&ds, opts)?;
    println!("\nk = 5 with another seed: {:.6?}", again.values.as_slice());
    Ok(())
}

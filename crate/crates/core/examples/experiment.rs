//! The pipelines behind the `sgdlab` binary, driven from Rust.
//!
//! ```bash
//! cargo run --release --example experiment -- crates/core/configs/fig2.toml /tmp/fig2
//! ```

use std::path::PathBuf;

use sgdlab::experiment::{cmd_compare, cmd_theory, ExperimentConfig};

fn main() -> sgdlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/fig2.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sgdlab-fig2"));

    let cfg = ExperimentConfig::load(&config)?;
    println!("config {} (hash {})", config.display(), &cfg.hash()[..12]);
    cmd_theory(&cfg, &out)?;
    let summary = cmd_compare(&cfg, &out)?;
    for run in &summary.runs {
        println!(
            "beta = {}: mean rmse {:.3}, FFT peak {:.2} bins from omega_1/2pi",
            run.beta,
            run.mean_rmse,
            run.frequency_bins_off.unwrap_or(f64::NAN)
        );
    }
    if let Some(r) = &summary.frequency_ratio {
        println!("frequency ratio measured {:.4}, analytic {:.4}", r.measured, r.analytic);
    }
    println!("{} checks, passed: {}; outputs in {}", summary.checks.len(), summary.passed, out.display());
    Ok(())
}

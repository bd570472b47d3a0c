//! Continuous-time theory of SGD with momentum on quadratic losses, checked
//! against a discrete simulator.
//!
//! The pieces, in the order an experiment uses them:
//!
//! * [`problem`]: least-squares data, `H`, `b`, `μ` and gradient noise.
//! * [`spectral`]: Hessian-vector products and subspace iteration.
//! * [`simulate`]: the discrete update `v ← βv − g − λθ`, `θ ← θ + ηv`.
//! * [`ou_theory`]: the phase-space Ornstein-Uhlenbeck model and its exact solution.
//! * [`decomposition`]: `A = (D+Q)U`, the modified loss and the probability current.
//! * [`diffusion`]: `E‖δ‖²`, `E‖Δ_t‖²`, velocity correlations and exponent fits.
//! * [`experiment`]: config files and the pipelines behind the command-line tool.

pub mod decomposition;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod lyapunov;
pub mod ou_theory;
pub mod problem;
pub mod signal;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};

//! Phase-space Ornstein-Uhlenbeck model of SGD on a quadratic and its exact solution.
//!
//! In the Hessian eigenbasis the drift decouples into 2×2 blocks
//! `A_l = [[0, −1], [ω_l², 2γ]]`, one damped harmonic oscillator per mode.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{CovarianceMode, NoiseModel, QuadraticModel};
use crate::simulate::OptimizerConfig;
use crate::spectral::EigenBasis;

/// Relative width of the band around `γ = ω` treated as critical damping.
pub const CRITICAL_BAND: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Overdamped,
    Critical,
    Underdamped,
}

impl Regime {
    pub fn classify(gamma: f64, omega: f64) -> Self {
        if (gamma - omega).abs() < CRITICAL_BAND * gamma.max(omega) {
            Regime::Critical
        } else if gamma > omega {
            Regime::Overdamped
        } else {
            Regime::Underdamped
        }
    }
}

/// One eigenmode of the phase-space dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeBlock {
    pub rho: f64,
    pub gamma: f64,
    pub omega: f64,
    pub alpha: f64,
    pub regime: Regime,
    pub zeta: f64,
    /// Gradient-noise variance along the mode, `q_lᵀΣq_l` (`σ²ρ_l` for `Σ = σ²H`).
    pub noise: f64,
}

impl ModeBlock {
    pub fn new(rho: f64, config: &OptimizerConfig) -> Self {
        let gamma = config.gamma();
        let omega = (2.0 * (rho + config.lambda) / (config.eta * (1.0 + config.beta))).sqrt();
        let mut m = Self::from_rates(gamma, omega);
        m.rho = rho;
        // Written directly in the hyperparameters so it stays accurate as ω → 0.
        m.zeta = (1.0 - config.beta)
            / (2.0 * config.eta * (1.0 + config.beta) * (rho + config.lambda)).sqrt();
        m
    }

    /// A bare oscillator `ä + 2γȧ + ω²a = 0` with no spectral data attached.
    pub fn from_rates(gamma: f64, omega: f64) -> Self {
        let alpha = ((gamma - omega).abs() * (gamma + omega)).sqrt();
        Self {
            rho: 0.0,
            gamma,
            omega,
            alpha,
            regime: Regime::classify(gamma, omega),
            zeta: gamma / omega,
            noise: 0.0,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// The drift block `[[0, −1], [ω², 2γ]]`.
    pub fn drift(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, -1.0, self.omega * self.omega, 2.0 * self.gamma)
    }

    /// `e^{−A_l t}` in closed form.
    ///
    /// The regime label only picks the trigonometric or hyperbolic branch; inside the
    /// critical band the true (tiny) `α` is kept and `sin(αt)/α`, `sinh(αt)/α` are
    /// evaluated by series, so the result is continuous across `γ = ω`.
    pub fn exponential(&self, t: f64) -> Matrix2<f64> {
        if t == 0.0 {
            return Matrix2::identity();
        }
        if t.is_infinite() {
            return Matrix2::zeros();
        }
        let g = self.gamma;
        let w2 = self.omega * self.omega;
        let a = self.alpha;
        if self.gamma < self.omega || a * t < 1.0 {
            let e = (-g * t).exp();
            let (c, s) = oscillation(self.gamma < self.omega, a, t);
            let (c, s) = (e * c, e * s);
            return Matrix2::new(c + g * s, s, -w2 * s, c - g * s);
        }
        // Two real exponentials; the slow rate γ−α = ω²/(γ+α) avoids cancellation.
        let slow = w2 / (g + a);
        let p = (-slow * t).exp();
        let m = (-(g + a) * t).exp();
        let s = (p - m) / (2.0 * a);
        let lo = slow / a; // (γ−α)/α
        let e11 = 0.5 * p * (1.0 + g / a) - 0.5 * m * lo;
        let e22 = -0.5 * p * lo + 0.5 * m * (1.0 + g / a);
        Matrix2::new(e11, s, -w2 * s, e22)
    }

    /// Stationary covariance block `κ⁻¹B_l` (position, velocity).
    pub fn stationary(&self, config: &OptimizerConfig) -> Matrix2<f64> {
        let kappa = config.kappa();
        let stiffness = self.rho + config.lambda;
        let pos = if self.noise == 0.0 {
            0.0
        } else {
            self.noise * config.eta * (1.0 + config.beta) / (2.0 * stiffness)
        };
        Matrix2::new(pos / kappa, 0.0, 0.0, self.noise / kappa)
    }
}

pub fn block_exponential(block: &ModeBlock, t: f64) -> Result<Matrix2<f64>> {
    check_time(t)?;
    Ok(block.exponential(t))
}

/// `(a(t), b(t))` for the oscillator started at `(a0, b0)`.
pub fn mode_mean(block: &ModeBlock, a0: f64, b0: f64, t: f64) -> Result<(f64, f64)> {
    check_time(t)?;
    let x = block.exponential(t) * Vector2::new(a0, b0);
    Ok((x[0], x[1]))
}

/// `(cos αt, sin(αt)/α)` when `trig`, else `(cosh αt, sinh(αt)/α)`; stable as `α → 0`.
pub(crate) fn oscillation(trig: bool, alpha: f64, t: f64) -> (f64, f64) {
    let x = alpha * t;
    let sign = if trig { -1.0 } else { 1.0 };
    if x.abs() < 1e-3 {
        let x2 = sign * x * x;
        let c = 1.0 + x2 / 2.0 * (1.0 + x2 / 12.0 * (1.0 + x2 / 30.0));
        let s = t * (1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0)));
        return (c, s);
    }
    if trig {
        (x.cos(), x.sin() / alpha)
    } else {
        (x.cosh(), x.sinh() / alpha)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::Argument(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// The OU process `dx = −A(x − [μ;0])dt + √(2κ⁻¹D) dW` in a Hessian eigenbasis.
#[derive(Debug, Clone)]
pub struct OUModel {
    pub config: OptimizerConfig,
    pub kappa: f64,
    pub mu: DVector<f64>,
    /// Columns `q_1..q_k`; `k = d` unless the model was restricted to a subspace.
    pub basis: DMatrix<f64>,
    pub modes: Vec<ModeBlock>,
    hessian: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
}

pub fn build_ou(
    model: &QuadraticModel,
    noise: &NoiseModel,
    config: &OptimizerConfig,
    basis: &EigenBasis,
) -> Result<OUModel> {
    config.validate()?;
    let d = model.dim();
    if basis.d() != d {
        return Err(Error::Dimension(format!("basis d = {}, model d = {d}", basis.d())));
    }
    let sigma = noise.covariance(&model.h);
    if let CovarianceMode::Empirical(_) = noise.covariance_mode {
        let comm = (&model.h * &sigma - &sigma * &model.h).norm();
        let scale = model.h.norm() * sigma.norm();
        if comm > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Model(format!(
                "noise covariance does not commute with the Hessian (‖HΣ − ΣH‖ = {comm:.3e}), \
                 so they are not simultaneously diagonalizable and the modes do not decouple"
            )));
        }
    }
    let mut modes = Vec::with_capacity(basis.k());
    for l in 0..basis.k() {
        let q = basis.vectors.column(l);
        let rho = basis.values[l].max(0.0);
        let s = q.dot(&(&sigma * q));
        if s > 0.0 && rho + config.lambda <= 0.0 {
            return Err(Error::Model(format!(
                "mode {l} has noise but no restoring force (rho + lambda = 0)"
            )));
        }
        modes.push(ModeBlock::new(rho, config).with_noise(s.max(0.0)));
    }
    Ok(OUModel {
        config: *config,
        kappa: config.kappa(),
        mu: model.mu.clone(),
        basis: basis.vectors.clone(),
        modes,
        hessian: model.h.clone(),
        noise_cov: sigma,
    })
}

impl OUModel {
    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn is_complete(&self) -> bool {
        self.k() == self.d()
    }

    /// `[μ; 0]`.
    pub fn mu_phase(&self) -> DVector<f64> {
        let d = self.d();
        let mut m = DVector::zeros(2 * d);
        m.rows_mut(0, d).copy_from(&self.mu);
        m
    }

    /// `A = [[0, −I], [2(H+λI)/(η(1+β)), 2γI]]`.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        let c = &self.config;
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        let scale = 2.0 / (c.eta * (1.0 + c.beta));
        for i in 0..d {
            a[(i, d + i)] = -1.0;
            a[(d + i, d + i)] = 2.0 * c.gamma();
            for j in 0..d {
                a[(d + i, j)] = scale * self.hessian[(i, j)];
            }
            a[(d + i, i)] += scale * c.lambda;
        }
        a
    }

    /// `D = [[0, 0], [0, 2γΣ]]`.
    pub fn diffusion_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        let g2 = 2.0 * self.config.gamma();
        m.view_mut((d, d), (d, d)).copy_from(&(&self.noise_cov * g2));
        m
    }

    /// Initial mode coordinates `(a_l(0), b_l(0))`.
    pub fn initial_modes(&self, theta0: &DVector<f64>, v0: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
        let d = self.d();
        if theta0.len() != d || v0.len() != d {
            return Err(Error::Dimension(format!("initial state does not match d = {d}")));
        }
        let a = self.basis.tr_mul(&(theta0 - &self.mu));
        let b = self.basis.tr_mul(v0);
        Ok(a.iter().zip(b.iter()).map(|(&x, &y)| (x, y)).collect())
    }

    /// Maps per-mode 2×2 blocks to a `2d×2d` phase-space matrix `O·blkdiag·Oᵀ`.
    pub fn assemble(&self, blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
        let d = self.d();
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        for (l, blk) in blocks.iter().enumerate() {
            let q = self.basis.column(l);
            let qqt = q * q.transpose();
            for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let mut view = out.view_mut((r * d, c * d), (d, d));
                view += &qqt * blk[(r, c)];
            }
        }
        out
    }

    fn require_complete(&self, what: &str) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::Argument(format!(
                "{what} needs a complete eigenbasis (k = {}, d = {})",
                self.k(),
                self.d()
            )));
        }
        Ok(())
    }

    /// Stationary blocks `κ⁻¹B_l`.
    pub fn stationary_blocks(&self) -> Vec<Matrix2<f64>> {
        self.modes.iter().map(|m| m.stationary(&self.config)).collect()
    }
}

/// `[μ;0] + Σ_l a_l(t)[q_l;0] + b_l(t)[0;q_l]`.
pub fn mean(ou: &OUModel, theta0: &DVector<f64>, v0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    ou.require_complete("the full phase-space mean")?;
    let init = ou.initial_modes(theta0, v0)?;
    let d = ou.d();
    let mut x = ou.mu_phase();
    for (l, (block, &(a0, b0))) in ou.modes.iter().zip(init.iter()).enumerate() {
        let m = block.exponential(t) * Vector2::new(a0, b0);
        let q = ou.basis.column(l);
        x.rows_mut(0, d).axpy(m[0], &q, 1.0);
        x.rows_mut(d, d).axpy(m[1], &q, 1.0);
    }
    Ok(x)
}

/// Per-mode covariance `Λ_l − E_l(t)Λ_lE_l(t)ᵀ` from a deterministic start.
pub fn variance(ou: &OUModel, t: f64) -> Result<Vec<Matrix2<f64>>> {
    check_time(t)?;
    Ok(ou
        .modes
        .iter()
        .map(|m| {
            let lam = m.stationary(&ou.config);
            let e = m.exponential(t);
            let v = lam - e * lam * e.transpose();
            // Exactly symmetric.
            let off = 0.5 * (v[(0, 1)] + v[(1, 0)]);
            Matrix2::new(v[(0, 0)], off, off, v[(1, 1)])
        })
        .collect())
}

/// Per-mode `Cov(x_t, x_s)` for `t ≤ s`.
pub fn cross_covariance(ou: &OUModel, t: f64, s: f64) -> Result<Vec<Matrix2<f64>>> {
    check_time(t)?;
    if t > s {
        return Err(Error::Argument(format!("cross covariance needs t <= s, got t={t}, s={s}")));
    }
    let var = if t.is_infinite() {
        ou.stationary_blocks()
    } else {
        variance(ou, t)?
    };
    let lag = if t.is_infinite() { 0.0 } else { s - t };
    Ok(ou
        .modes
        .iter()
        .zip(var)
        .map(|(m, v)| v * m.exponential(lag).transpose())
        .collect())
}

/// Stationary cross covariance at lag `τ`: `κ⁻¹B_lE_l(τ)ᵀ`.
pub fn stationary_cross_covariance(ou: &OUModel, lag: f64) -> Result<Vec<Matrix2<f64>>> {
    check_time(lag)?;
    Ok(ou
        .modes
        .iter()
        .map(|m| m.stationary(&ou.config) * m.exponential(lag).transpose())
        .collect())
}

/// Lower Cholesky factor of a 2×2 PSD matrix, tolerant of exact or near singularity.
fn chol2(v: &Matrix2<f64>) -> Matrix2<f64> {
    let p = v[(0, 0)].max(0.0);
    let q = v[(1, 1)].max(0.0);
    if p <= 0.0 {
        return Matrix2::new(0.0, 0.0, 0.0, q.sqrt());
    }
    let l11 = p.sqrt();
    let l21 = v[(1, 0)] / l11;
    let l22 = (q - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

const SAMPLE_CHUNK: usize = 4096;

/// `n` exact draws of `[θ; v]` at time `t` (use `f64::INFINITY` for the stationary law).
/// Row `i` of the result is one sample.
pub fn sample_exact(
    ou: &OUModel,
    theta0: &DVector<f64>,
    v0: &DVector<f64>,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    check_time(t)?;
    ou.require_complete("phase-space sampling")?;
    let d = ou.d();
    let center = mean(ou, theta0, v0, t)?;
    let factors: Vec<Matrix2<f64>> = if t.is_infinite() {
        ou.stationary_blocks().iter().map(chol2).collect()
    } else {
        variance(ou, t)?.iter().map(chol2).collect()
    };
    let chunks: Vec<DMatrix<f64>> = (0..n.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut out = DMatrix::zeros(rows, 2 * d);
            let mut a = DVector::zeros(ou.k());
            let mut b = DVector::zeros(ou.k());
            for r in 0..rows {
                for (l, f) in factors.iter().enumerate() {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    a[l] = f[(0, 0)] * z1;
                    b[l] = f[(1, 0)] * z1 + f[(1, 1)] * z2;
                }
                let th = &ou.basis * &a;
                let vv = &ou.basis * &b;
                for j in 0..d {
                    out[(r, j)] = center[j] + th[j];
                    out[(r, d + j)] = center[d + j] + vv[j];
                }
            }
            out
        })
        .collect();
    let mut all = DMatrix::zeros(n, 2 * d);
    let mut row = 0;
    for c in chunks {
        all.rows_mut(row, c.nrows()).copy_from(&c);
        row += c.nrows();
    }
    Ok(all)
}

/// A stationary phase state drawn from the OU law, as `(θ, v)`.
pub fn sample_stationary_state(ou: &OUModel, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = ou.d();
    let zero = DVector::zeros(d);
    let s = sample_exact(ou, &ou.mu, &zero, f64::INFINITY, 1, seed)?;
    let row = s.row(0).transpose();
    Ok((row.rows(0, d).into_owned(), row.rows(d, d).into_owned()))
}

/// Writes `t,mode,a_mean,b_mean,var_aa,var_ab,var_bb` (modes 1-based).
pub fn write_theory_csv(
    path: &Path,
    ou: &OUModel,
    theta0: &DVector<f64>,
    v0: &DVector<f64>,
    modes: &[usize],
    times: &[f64],
) -> Result<()> {
    let init = ou.initial_modes(theta0, v0)?;
    for &l in modes {
        if l >= ou.k() {
            return Err(Error::Argument(format!("mode {l} out of range for k = {}", ou.k())));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "mode", "a_mean", "b_mean", "var_aa", "var_ab", "var_bb"])?;
    for &t in times {
        let var = variance(ou, t)?;
        for &l in modes {
            let (a0, b0) = init[l];
            let (a, b) = mode_mean(&ou.modes[l], a0, b0, t)?;
            let v = var[l];
            w.write_record([
                t.to_string(),
                (l + 1).to_string(),
                a.to_string(),
                b.to_string(),
                v[(0, 0)].to_string(),
                v[(0, 1)].to_string(),
                v[(1, 1)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

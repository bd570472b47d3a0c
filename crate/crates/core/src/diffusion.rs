//! Displacement statistics, velocity autocorrelation, power-law fits and equipartition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_theory::{oscillation, ModeBlock, Regime};
use crate::problem::{sorted_symmetric_eigen, NoiseModel, QuadraticModel};
use crate::simulate::OptimizerConfig;

/// `E‖δ‖² = η²σ²tr(H) / (S(1−β²))`.
pub fn expected_local_displacement(config: &OptimizerConfig, sigma_sq_tr_h: f64) -> f64 {
    config.eta * config.eta * sigma_sq_tr_h / config.kappa()
}

/// Inverts [`expected_local_displacement`].
pub fn estimate_sigma_tr_h(measured_delta_sq: f64, config: &OptimizerConfig) -> Result<f64> {
    if !(measured_delta_sq > 0.0) || !measured_delta_sq.is_finite() {
        return Err(Error::Argument(format!(
            "measured displacement must be positive, got {measured_delta_sq}"
        )));
    }
    Ok(measured_delta_sq * config.kappa() / (config.eta * config.eta))
}

/// Normalized stationary velocity autocorrelation of one mode at continuous lag `τ`.
pub fn velocity_autocorrelation(block: &ModeBlock, lag: f64) -> f64 {
    if lag == 0.0 {
        return 1.0;
    }
    let g = block.gamma;
    let a = block.alpha;
    if block.gamma < block.omega || a * lag < 1.0 {
        let (c, s) = oscillation(block.gamma < block.omega, a, lag);
        return (-g * lag).exp() * (c - g * s);
    }
    let w2 = block.omega * block.omega;
    let slow = w2 / (g + a);
    -0.5 * slow / a * (-slow * lag).exp() + 0.5 * (1.0 + g / a) * (-(g + a) * lag).exp()
}

/// How step lags map onto the continuous-time rates `γ`, `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LagUnits {
    /// `τ = ηk`.
    #[default]
    Continuous,
    /// `τ = k`.
    Steps,
}

impl LagUnits {
    pub fn lag(&self, config: &OptimizerConfig, k: usize) -> f64 {
        match self {
            LagUnits::Continuous => config.eta * k as f64,
            LagUnits::Steps => k as f64,
        }
    }
}

/// Velocity correlation model used inside the global-displacement sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Modal(LagUnits),
    /// `C ≡ 0`: uncorrelated steps.
    Zero,
    /// `C ≡ 1`: perfectly persistent steps.
    One,
}

/// `E‖Δ_t‖²` for `t = 1..=horizon` steps, returned as `(t, value)` pairs.
///
/// Uses `Σ_{k=1}^t (t−k)R(k) = t·ΣR − ΣkR` with running sums, so the whole
/// curve costs `O(horizon · modes)`.
pub fn msd_curve(
    spectrum: &[f64],
    config: &OptimizerConfig,
    sigma_sq: f64,
    horizon: usize,
    corr: Correlation,
) -> Vec<(f64, f64)> {
    let blocks: Vec<ModeBlock> = spectrum.iter().map(|&r| ModeBlock::new(r, config)).collect();
    let tr_h: f64 = spectrum.iter().sum();
    let pre = config.eta * config.eta * sigma_sq / config.kappa();
    let mut out = Vec::with_capacity(horizon);
    let (mut s0, mut s1) = (0.0f64, 0.0f64);
    for t in 1..=horizon {
        let r = match corr {
            Correlation::Zero => 0.0,
            Correlation::One => tr_h,
            Correlation::Modal(units) => {
                let tau = units.lag(config, t);
                blocks.iter().map(|b| b.rho * velocity_autocorrelation(b, tau)).sum()
            }
        };
        // R(t) enters the sum for horizons strictly greater than t; add it after use.
        let tf = t as f64;
        out.push((tf, pre * (tr_h * tf + 2.0 * (tf * s0 - s1))));
        s0 += r;
        s1 += tf * r;
    }
    out
}

/// `E‖Δ_t‖²` at a single horizon `t ≥ 1`, by direct summation.
pub fn expected_global_displacement(
    spectrum: &[f64],
    config: &OptimizerConfig,
    sigma_sq: f64,
    t: usize,
    units: LagUnits,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::Argument("horizon t must be >= 1".into()));
    }
    let blocks: Vec<ModeBlock> = spectrum.iter().map(|&r| ModeBlock::new(r, config)).collect();
    let tr_h: f64 = spectrum.iter().sum();
    let mut acc = 0.0;
    for k in 1..=t {
        let tau = units.lag(config, k);
        let r: f64 = blocks.iter().map(|b| b.rho * velocity_autocorrelation(b, tau)).sum();
        acc += (1.0 - k as f64 / t as f64) * r;
    }
    let tf = t as f64;
    Ok(config.eta * config.eta * sigma_sq / config.kappa() * (tr_h * tf + 2.0 * tf * acc))
}

/// Roughly `points` log-spaced entries of a curve indexed by `t = 1..`.
pub fn geometric_subsample(curve: &[(f64, f64)], points: usize) -> Vec<(f64, f64)> {
    let n = curve.len();
    if n == 0 || points == 0 {
        return Vec::new();
    }
    if points >= n {
        return curve.to_vec();
    }
    let mut idx: Vec<usize> = (0..points)
        .map(|i| {
            let f = i as f64 / (points - 1).max(1) as f64;
            ((n as f64).powf(f).round() as usize).clamp(1, n) - 1
        })
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| curve[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Exponent `c`.
    pub exponent: f64,
    pub amplitude: f64,
    pub points: usize,
}

/// Least-squares line through `(log t, log value)` on the points from
/// `floor(window_start_fraction · n)` onward.
pub fn fit_power_law(msd: &[(f64, f64)], window_start_fraction: f64) -> Result<PowerLawFit> {
    if !(0.0..1.0).contains(&window_start_fraction) {
        return Err(Error::Fit(format!(
            "window start fraction must lie in [0, 1), got {window_start_fraction}"
        )));
    }
    let start = (window_start_fraction * msd.len() as f64).floor() as usize;
    let window = &msd[start..];
    if window.len() < 10 {
        return Err(Error::Fit(format!("need at least 10 points in the window, got {}", window.len())));
    }
    if let Some(&(t, v)) = window.iter().find(|&&(t, v)| !(t > 0.0 && v > 0.0)) {
        return Err(Error::Fit(format!("non-positive point ({t}, {v}) in fit window")));
    }
    let n = window.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(t, v) in window {
        sx += t.ln();
        sy += v.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(t, v) in window {
        let dx = t.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (v.ln() - my);
    }
    if sxx == 0.0 {
        return Err(Error::Fit("all fit points share the same t".into()));
    }
    let c = sxy / sxx;
    Ok(PowerLawFit { exponent: c, amplitude: (my - c * mx).exp(), points: window.len() })
}

/// `ζ_l` and regime for each eigenvalue.
pub fn damping_profile(spectrum: &[f64], config: &OptimizerConfig) -> Vec<(f64, Regime)> {
    spectrum
        .iter()
        .map(|&r| {
            let b = ModeBlock::new(r, config);
            (b.zeta, b.regime)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub over: usize,
    pub critical: usize,
    pub under: usize,
}

impl RegimeCounts {
    pub fn tally(profile: &[(f64, Regime)]) -> Self {
        let mut c = Self::default();
        for &(_, r) in profile {
            match r {
                Regime::Overdamped => c.over += 1,
                Regime::Critical => c.critical += 1,
                Regime::Underdamped => c.under += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub expected_delta_sq: f64,
    pub msd_curve: Vec<(f64, f64)>,
    pub fitted_exponent: f64,
    /// `(start_fraction, last t)`.
    pub fit_window: (f64, f64),
    pub damping_ratios: Vec<f64>,
    pub regime_counts: RegimeCounts,
}

pub fn diffusion_report(
    spectrum: &[f64],
    config: &OptimizerConfig,
    sigma_sq: f64,
    horizon: usize,
    units: LagUnits,
    window_start_fraction: f64,
) -> Result<DiffusionReport> {
    let mut curve = vec![(0.0, 0.0)];
    curve.extend(msd_curve(spectrum, config, sigma_sq, horizon, Correlation::Modal(units)));
    let fit = fit_power_law(&curve[1..], window_start_fraction)?;
    let profile = damping_profile(spectrum, config);
    Ok(DiffusionReport {
        expected_delta_sq: expected_local_displacement(config, sigma_sq * spectrum.iter().sum::<f64>()),
        fit_window: (window_start_fraction, horizon as f64),
        fitted_exponent: fit.exponent,
        damping_ratios: profile.iter().map(|p| p.0).collect(),
        regime_counts: RegimeCounts::tally(&profile),
        msd_curve: curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquipartitionReport {
    /// `E[½(θ−μ)ᵀH(θ−μ) + (λ/2)‖θ‖²]` at stationarity.
    pub expected_loss: f64,
    /// `E[(m/2)‖v‖²]` at stationarity.
    pub expected_kinetic: f64,
    /// `expected_loss − expected_kinetic`; equals `(λ/2)‖μ‖²`.
    pub offset: f64,
}

/// Stationary energies summed over the modal covariance blocks.
pub fn equipartition_report(
    model: &QuadraticModel,
    noise: &NoiseModel,
    config: &OptimizerConfig,
) -> EquipartitionReport {
    let (vals, vecs) = sorted_symmetric_eigen(&model.h);
    let sigma = noise.covariance(&model.h);
    let mut loss = 0.5 * config.lambda * model.mu.norm_squared();
    let mut kinetic = 0.0;
    for l in 0..vals.len() {
        let q = vecs.column(l);
        let rho = vals[l].max(0.0);
        let block = ModeBlock::new(rho, config).with_noise(q.dot(&(&sigma * q)).max(0.0));
        let lam = block.stationary(config);
        loss += 0.5 * (rho + config.lambda) * lam[(0, 0)];
        kinetic += 0.5 * config.mass() * lam[(1, 1)];
    }
    EquipartitionReport { expected_loss: loss, expected_kinetic: kinetic, offset: loss - kinetic }
}

/// `ησ²tr(H) / (4S(1−β))`, the stationary kinetic energy for `Σ = σ²H`.
pub fn equipartition_energy(config: &OptimizerConfig, sigma_sq_tr_h: f64) -> f64 {
    config.eta * sigma_sq_tr_h / (4.0 * config.batch_size as f64 * (1.0 - config.beta))
}

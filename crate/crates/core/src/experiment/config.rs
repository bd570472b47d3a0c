use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::LagUnits;
use crate::error::{Error, Result};
use crate::simulate::{BatchSampling, OptimizerConfig};

pub const SPEC_VERSION: u32 = 1;

/// Target diagonal of `H` (per-coordinate input variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spectrum {
    #[default]
    Isotropic,
    /// Log-evenly spaced from `max` (coordinate 0) down to `min`.
    Geometric { max: f64, min: f64 },
    Explicit { values: Vec<f64> },
}

impl Spectrum {
    /// Column scales for the design matrix (square roots of the target variances).
    pub fn scales(&self, d: usize) -> Result<Option<Vec<f64>>> {
        match self {
            Spectrum::Isotropic => Ok(None),
            Spectrum::Geometric { max, min } => {
                if !(*max > 0.0 && *min > 0.0) {
                    return Err(Error::Config("spectrum max and min must be positive".into()));
                }
                Ok(Some(
                    (0..d)
                        .map(|j| {
                            let f = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
                            (max.ln() + f * (min.ln() - max.ln())).exp().sqrt()
                        })
                        .collect(),
                ))
            }
            Spectrum::Explicit { values } => {
                if values.len() != d {
                    return Err(Error::Config(format!(
                        "problem.spectrum.values has {} entries, d = {d}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config("spectrum values must be positive".into()));
                }
                Ok(Some(values.iter().map(|v| v.sqrt()).collect()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    pub d: usize,
    pub sigma_gen: f64,
    pub seed: u64,
    /// Every entry of the generative model `θ̄`.
    #[serde(default = "one")]
    pub theta_bar: f64,
    #[serde(default)]
    pub spectrum: Spectrum,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Minibatch,
    Idealized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// `θ_0 = 0`, `v_0 = 0`.
    #[default]
    Zero,
    /// `θ_0 = μ`, `v_0 = 0`.
    Minimum,
    /// A draw from the stationary law of the continuous model.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub sampling: BatchSampling,
    #[serde(default)]
    pub start: Start,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl SweepSpec {
    /// Explicit values, or `points` (default 20) evenly spaced over `[start, end]`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.values {
            if v.is_empty() {
                return Err(Error::Config("analysis.sweep.values is empty".into()));
            }
            return Ok(v.clone());
        }
        match (self.start, self.end) {
            (Some(a), Some(b)) => Ok(linspace(a, b, self.points.unwrap_or(20))),
            _ => Err(Error::Config(
                "analysis.sweep needs either `values` or both `start` and `end`".into(),
            )),
        }
    }
}

/// `n` evenly spaced numbers over `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Pass/fail thresholds for `compare`; unset checks are reported but never fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_sq: Option<f64>,
    /// Allowed distance of the FFT peak from `ω_1/(2π)`, in bins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_bins: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_window")]
    pub fit_window: f64,
    #[serde(default)]
    pub lag_units: LagUnits,
    #[serde(default = "default_iters")]
    pub subspace_iters: usize,
    /// Extra momentum values for `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default = "default_theory_points")]
    pub theory_points: usize,
    /// 1-based eigenmode pair for `decompose` planes; defaults to `[1, k]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<[usize; 2]>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_k() -> usize {
    2
}
fn default_window() -> f64 {
    1.0 / 3.0
}
fn default_iters() -> usize {
    10
}
fn default_theory_points() -> usize {
    200
}
fn default_grid() -> usize {
    21
}
fn default_probes() -> usize {
    100
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            k: default_k(),
            fit_window: default_window(),
            lag_units: LagUnits::default(),
            subspace_iters: default_iters(),
            betas: None,
            theory_points: default_theory_points(),
            plane: None,
            grid: default_grid(),
            probes: default_probes(),
            sweep: None,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec_version: u32,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "spec_version = {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        let p = &self.problem;
        if p.n == 0 || p.d == 0 {
            return Err(Error::Config("problem.n and problem.d must be >= 1".into()));
        }
        if !(p.sigma_gen >= 0.0) {
            return Err(Error::Config("problem.sigma_gen must be >= 0".into()));
        }
        p.spectrum.scales(p.d)?;
        self.optimizer.validate().map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        if self.run.steps == 0 {
            return Err(Error::Config("run.steps must be >= 1".into()));
        }
        if self.run.stride == 0 || self.run.replicas == 0 {
            return Err(Error::Config("run.stride and run.replicas must be >= 1".into()));
        }
        let a = &self.analysis;
        if a.k == 0 || a.k > p.d {
            return Err(Error::Config(format!("analysis.k = {} must lie in 1..={}", a.k, p.d)));
        }
        if !(0.0..1.0).contains(&a.fit_window) {
            return Err(Error::Config("analysis.fit_window must lie in [0, 1)".into()));
        }
        if let Some(betas) = &a.betas {
            if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
                return Err(Error::Config("analysis.betas must lie in [0, 1)".into()));
            }
        }
        if let Some([i, j]) = a.plane {
            if i == 0 || j == 0 || i > a.k || j > a.k || i == j {
                return Err(Error::Config(format!(
                    "analysis.plane = [{i}, {j}] must name two distinct modes in 1..={}",
                    a.k
                )));
            }
        }
        Ok(())
    }
}

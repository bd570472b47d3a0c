use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NoiseKind, Start};
use crate::decomposition::{closed_form_qu, kwon_decompose, stationarity_certificate, Certificate, Restriction};
use crate::diffusion::{
    diffusion_report, expected_local_displacement, fit_power_law, msd_curve, Correlation,
    PowerLawFit,
};
use crate::error::{Error, Result};
use crate::ou_theory::{build_ou, mode_mean, sample_stationary_state, variance, write_theory_csv, OUModel, Regime};
use crate::problem::{build_quadratic, generate_regression_scaled, NoiseModel, QuadraticModel, RegressionDataset};
use crate::signal::{dominant_frequency, refined_frequency};
use crate::simulate::{replica_seed, NoiseSource, OptimizerConfig, RunSpec, Simulator, TrajectoryRecord};
use crate::spectral::{subspace_iteration, EigenBasis};

/// Dataset, model and eigenbasis built from a config.
pub struct Prepared {
    pub dataset: RegressionDataset,
    pub model: QuadraticModel,
    pub basis: EigenBasis,
    pub noise: NoiseModel,
    pub config: OptimizerConfig,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let p = &cfg.problem;
    let scales = p.spectrum.scales(p.d)?;
    let theta_bar = DVector::from_element(p.d, p.theta_bar);
    let dataset = generate_regression_scaled(p.n, &theta_bar, p.sigma_gen, scales.as_deref(), p.seed)?;
    let model = build_quadratic(&dataset, cfg.optimizer.lambda)?;
    let basis = subspace_iteration(&model, cfg.analysis.k, cfg.analysis.subspace_iters, 1e-12, p.seed)?;
    let noise = NoiseModel::scaled_hessian(p.sigma_gen * p.sigma_gen)?;
    Ok(Prepared { dataset, model, basis, noise, config: cfg.optimizer })
}

impl Prepared {
    pub fn source(&self, kind: NoiseKind, cfg: &ExperimentConfig) -> NoiseSource<'_> {
        match kind {
            NoiseKind::Minibatch => {
                NoiseSource::Minibatch { dataset: &self.dataset, sampling: cfg.run.sampling }
            }
            NoiseKind::Idealized => NoiseSource::Idealized { sigma_sq: self.noise.sigma_sq },
        }
    }

    /// OU model over the full eigenbasis, for stationary draws.
    pub fn full_ou(&self, config: &OptimizerConfig) -> Result<OUModel> {
        let full = EigenBasis::dense(&self.model.h, self.model.dim())?;
        build_ou(&self.model, &self.noise, config, &full)
    }

    pub fn sigma_sq_tr_h(&self) -> f64 {
        self.noise.sigma_sq * self.model.h.trace()
    }
}

fn initial_state(
    prep: &Prepared,
    start: Start,
    full_ou: Option<&OUModel>,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = prep.model.dim();
    match start {
        Start::Zero => Ok((DVector::zeros(d), DVector::zeros(d))),
        Start::Minimum => Ok((prep.model.mu.clone(), DVector::zeros(d))),
        Start::Stationary => {
            let ou = full_ou.ok_or_else(|| Error::Argument("stationary start needs an OU model".into()))?;
            sample_stationary_state(ou, seed)
        }
    }
}

fn run_replicas(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    config: OptimizerConfig,
    with_basis: bool,
) -> Result<Vec<TrajectoryRecord>> {
    let sim = Simulator::new(&prep.model, config, prep.source(cfg.run.noise, cfg))?;
    let full_ou = match cfg.run.start {
        Start::Stationary => Some(prep.full_ou(&config)?),
        _ => None,
    };
    (0..cfg.run.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let seed = replica_seed(cfg.run.seed, i);
            let (theta0, v0) = initial_state(prep, cfg.run.start, full_ou.as_ref(), seed ^ 0x5eed)?;
            let spec = RunSpec {
                steps: cfg.run.steps,
                stride: cfg.run.stride,
                seed,
                theta0,
                v0: Some(v0),
                basis: with_basis.then(|| prep.basis.clone()),
            };
            sim.run(&spec)
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub rho: f64,
    pub omega: f64,
    pub zeta: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Derived {
    pub kappa: f64,
    pub gamma: f64,
    pub mass: f64,
    pub sigma_sq: f64,
    pub sigma_sq_tr_h: f64,
    pub modes: Vec<ModeSummary>,
}

fn derived(prep: &Prepared, config: &OptimizerConfig) -> Derived {
    let modes = prep
        .basis
        .values
        .iter()
        .map(|&rho| {
            let b = crate::ou_theory::ModeBlock::new(rho, config);
            ModeSummary { rho, omega: b.omega, zeta: b.zeta, regime: b.regime }
        })
        .collect();
    Derived {
        kappa: config.kappa(),
        gamma: config.gamma(),
        mass: config.mass(),
        sigma_sq: prep.noise.sigma_sq,
        sigma_sq_tr_h: prep.sigma_sq_tr_h(),
        modes,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub problem_seed: u64,
    pub run_seed: u64,
    pub replica_seeds: Vec<u64>,
    pub derived: Derived,
    pub files: Vec<String>,
    pub created_unix: u64,
}

fn manifest(cfg: &ExperimentConfig, prep: &Prepared, command: &str, seeds: Vec<u64>, files: &[PathBuf]) -> Manifest {
    Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        problem_seed: cfg.problem.seed,
        run_seed: cfg.run.seed,
        replica_seeds: seeds,
        derived: derived(prep, &cfg.optimizer),
        files: files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    }
}

/// Runs every replica and writes `trajectory_NNN.csv` plus `manifest.json`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let prep = prepare(cfg)?;
    let runs = run_replicas(&prep, cfg, cfg.optimizer, true)?;
    let mut files = Vec::new();
    for (i, rec) in runs.iter().enumerate() {
        let path = out.join(format!("trajectory_{i:03}.csv"));
        rec.write_csv(&path)?;
        files.push(path);
    }
    let seeds = runs.iter().map(|r| r.seed).collect();
    write_json(&out.join("manifest.json"), &manifest(cfg, &prep, "simulate", seeds, &files))?;
    Ok(files)
}

/// Analytic curves only: `theory.csv`, `msd.csv`, `diffusion.json`.
pub fn cmd_theory(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let prep = prepare(cfg)?;
    let ou = build_ou(&prep.model, &prep.noise, &cfg.optimizer, &prep.basis)?;
    let (theta0, v0) = match cfg.run.start {
        Start::Zero | Start::Stationary => (DVector::zeros(prep.model.dim()), DVector::zeros(prep.model.dim())),
        Start::Minimum => (prep.model.mu.clone(), DVector::zeros(prep.model.dim())),
    };
    let horizon = cfg.optimizer.eta * cfg.run.steps as f64;
    let times = super::config::linspace(0.0, horizon, cfg.analysis.theory_points.max(2));
    let modes: Vec<usize> = (0..ou.k()).collect();
    write_theory_csv(&out.join("theory.csv"), &ou, &theta0, &v0, &modes, &times)?;

    let (vals, _) = prep.model.eigen();
    let spectrum: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let report = diffusion_report(
        &spectrum,
        &cfg.optimizer,
        prep.noise.sigma_sq,
        cfg.run.steps.max(10),
        cfg.analysis.lag_units,
        cfg.analysis.fit_window,
    )?;
    let mut w = csv::Writer::from_path(out.join("msd.csv"))?;
    w.write_record(["step", "t", "msd"])?;
    for &(t, v) in &report.msd_curve {
        w.write_record([t.to_string(), (t * cfg.optimizer.eta).to_string(), v.to_string()])?;
    }
    w.flush()?;
    write_json(&out.join("diffusion.json"), &report)?;
    write_json(&out.join("manifest.json"), &manifest(cfg, &prep, "theory", Vec::new(), &[]))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunComparison {
    pub beta: f64,
    /// `‖ā_1 − a_1^theory‖_rms / ‖a_1^theory‖_rms` over the run.
    pub mean_rmse: f64,
    /// Worst second-half variance deviation, relative to the stationary variance.
    pub variance_error: Option<f64>,
    pub delta_sq_measured: Option<f64>,
    pub delta_sq_predicted: f64,
    pub delta_sq_error: Option<f64>,
    pub peak_frequency: Option<f64>,
    pub refined_frequency: Option<f64>,
    pub frequency_resolution: Option<f64>,
    pub omega_frequency: f64,
    pub damped_frequency: f64,
    pub frequency_bins_off: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyRatio {
    pub measured: f64,
    pub analytic: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSummary {
    pub runs: Vec<RunComparison>,
    pub frequency_ratio: Option<FrequencyRatio>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl CompareSummary {
    pub fn failing(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn ensemble(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

fn compare_one(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    config: OptimizerConfig,
    out: &Path,
) -> Result<RunComparison> {
    let runs = run_replicas(prep, cfg, config, true)?;
    let ou = build_ou(&prep.model, &prep.noise, &config, &prep.basis)?;
    let k = prep.basis.k();
    let steps = cfg.run.steps;
    let r = runs.len();
    let stationary = ou.stationary_blocks();
    let deterministic = cfg.run.start != Start::Stationary;
    let init = ou.initial_modes(&runs[0].states[0].theta, &runs[0].states[0].v)?;

    let mut header = vec!["step".to_string(), "t".to_string()];
    for l in 1..=k {
        for col in ["a_sim", "a_theory", "b_sim", "b_theory", "var_a_sim", "var_a_theory", "var_b_sim", "var_b_theory"] {
            header.push(format!("{col}_{l}"));
        }
    }
    let path = out.join(format!("compare_beta_{}.csv", config.beta));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;

    let mut a1_sim = Vec::with_capacity(steps + 1);
    let mut a1_th = Vec::with_capacity(steps + 1);
    let mut var_err = 0.0f64;
    for step in 0..=steps {
        let t = config.eta * step as f64;
        let var_th = if deterministic { variance(&ou, t)? } else { stationary.clone() };
        let mut row = vec![step.to_string(), t.to_string()];
        for l in 0..k {
            let (am, av) = ensemble(runs.iter().map(|x| x.projections.as_ref().unwrap().a[(step, l)]), r);
            let (bm, bv) = ensemble(runs.iter().map(|x| x.projections.as_ref().unwrap().b[(step, l)]), r);
            let (at, bt) = if deterministic { mode_mean(&ou.modes[l], init[l].0, init[l].1, t)? } else { (0.0, 0.0) };
            let vt = var_th[l];
            if l == 0 {
                a1_sim.push(am);
                a1_th.push(at);
            }
            if r >= 2 && step * 2 >= steps {
                let sa = stationary[l][(0, 0)];
                let sb = stationary[l][(1, 1)];
                let ea = if sa > 0.0 { (av - vt[(0, 0)]).abs() / sa } else { (av - vt[(0, 0)]).abs() };
                let eb = if sb > 0.0 { (bv - vt[(1, 1)]).abs() / sb } else { (bv - vt[(1, 1)]).abs() };
                var_err = var_err.max(ea).max(eb);
            }
            for x in [am, at, bm, bt, av, vt[(0, 0)], bv, vt[(1, 1)]] {
                row.push(x.to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let num: f64 = a1_sim.iter().zip(&a1_th).map(|(s, t)| (s - t) * (s - t)).sum();
    let den: f64 = a1_th.iter().map(|t| t * t).sum();
    let mean_rmse = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };

    let delta_sq_predicted = expected_local_displacement(&config, prep.sigma_sq_tr_h());
    let delta_sq_measured = (cfg.run.burn_in < steps).then(|| {
        runs.iter().map(|x| x.mean_delta_sq(cfg.run.burn_in + 1)).sum::<f64>() / r as f64
    });
    let delta_sq_error = delta_sq_measured.map(|m| {
        if delta_sq_predicted > 0.0 { (m - delta_sq_predicted).abs() / delta_sq_predicted } else { m }
    });

    let mode = &ou.modes[0];
    let two_pi = 2.0 * std::f64::consts::PI;
    let peak = dominant_frequency(&a1_sim, config.eta);
    let omega_frequency = mode.omega / two_pi;
    let damped_frequency = if mode.regime == Regime::Underdamped { mode.alpha / two_pi } else { 0.0 };
    Ok(RunComparison {
        beta: config.beta,
        mean_rmse,
        variance_error: (r >= 2).then_some(var_err),
        delta_sq_measured,
        delta_sq_predicted,
        delta_sq_error,
        peak_frequency: peak.map(|p| p.frequency),
        refined_frequency: refined_frequency(&a1_sim, config.eta),
        frequency_resolution: peak.map(|p| p.resolution),
        omega_frequency,
        damped_frequency,
        frequency_bins_off: peak.map(|p| (p.frequency - omega_frequency).abs() / p.resolution),
    })
}

/// Simulation against theory for each momentum value; writes one CSV per run
/// and `summary.json`.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<CompareSummary> {
    std::fs::create_dir_all(out)?;
    let prep = prepare(cfg)?;
    let betas = cfg.analysis.betas.clone().unwrap_or_else(|| vec![cfg.optimizer.beta]);
    let runs = betas
        .iter()
        .map(|&beta| compare_one(&prep, cfg, OptimizerConfig { beta, ..cfg.optimizer }, out))
        .collect::<Result<Vec<_>>>()?;

    let frequency_ratio = if runs.len() >= 2 {
        match (runs[0].refined_frequency, runs[1].refined_frequency) {
            (Some(f0), Some(f1)) if f0 > 0.0 && runs[0].damped_frequency > 0.0 => {
                let analytic = runs[1].damped_frequency / runs[0].damped_frequency;
                let measured = f1 / f0;
                Some(FrequencyRatio { measured, analytic, error: (measured - analytic).abs() / analytic })
            }
            _ => None,
        }
    } else {
        None
    };

    let tol = &cfg.analysis.tolerances;
    let mut checks = Vec::new();
    let mut push = |name: String, value: Option<f64>, t: Option<f64>| {
        if let (Some(value), Some(tolerance)) = (value, t) {
            checks.push(Check { name, value, tolerance, passed: value <= tolerance });
        }
    };
    for run in &runs {
        let b = run.beta;
        push(format!("mean_rmse[beta={b}]"), Some(run.mean_rmse), tol.mean_rmse);
        push(format!("variance[beta={b}]"), run.variance_error, tol.variance);
        push(format!("delta_sq[beta={b}]"), run.delta_sq_error, tol.delta_sq);
        push(format!("frequency_bins[beta={b}]"), run.frequency_bins_off, tol.frequency_bins);
    }
    push("frequency_ratio".into(), frequency_ratio.as_ref().map(|f| f.error), tol.frequency_ratio);
    let passed = checks.iter().all(|c| c.passed);
    let summary = CompareSummary { runs, frequency_ratio, checks, passed };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("manifest.json"), &manifest(cfg, &prep, "compare", Vec::new(), &[]))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub delta_sq_pred: f64,
    pub delta_sq_measured: f64,
    pub c_fit_analytic: f64,
    pub c_fit_simulated: f64,
}

pub const SWEEP_PARAMS: [&str; 4] = ["eta", "beta", "batch_size", "lambda"];

fn with_param(cfg: &ExperimentConfig, param: &str, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        "eta" => c.optimizer.eta = value,
        "beta" => c.optimizer.beta = value,
        "lambda" => c.optimizer.lambda = value,
        "batch_size" => {
            if !(value >= 1.0) || value.fract() != 0.0 {
                return Err(Error::Config(format!("batch_size must be a positive integer, got {value}")));
            }
            c.optimizer.batch_size = value as usize;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown sweep parameter {other:?}; expected one of {SWEEP_PARAMS:?}"
            )))
        }
    }
    c.optimizer.validate().map_err(|e| Error::Config(format!("sweep point {param} = {value}: {e}")))?;
    Ok(c)
}

fn sweep_point(cfg: &ExperimentConfig, param: &str, value: f64) -> Result<SweepRow> {
    let prep = prepare(cfg)?;
    let (vals, _) = prep.model.eigen();
    let spectrum: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let config = cfg.optimizer;
    let steps = cfg.run.steps;
    let analytic = msd_curve(&spectrum, &config, prep.noise.sigma_sq, steps, Correlation::Modal(cfg.analysis.lag_units));
    let c_fit_analytic = fit_power_law(&analytic, cfg.analysis.fit_window)?.exponent;

    let runs = run_replicas(&prep, cfg, config, false)?;
    let r = runs.len() as f64;
    let simulated: Vec<(f64, f64)> = (1..=steps)
        .map(|t| (t as f64, runs.iter().map(|x| x.big_delta_sq[t]).sum::<f64>() / r))
        .collect();
    let c_fit_simulated = fit_power_law(&simulated, cfg.analysis.fit_window)?.exponent;
    let from = cfg.run.burn_in.min(steps - 1) + 1;
    let delta_sq_measured = runs.iter().map(|x| x.mean_delta_sq(from)).sum::<f64>() / r;
    Ok(SweepRow {
        param_name: param.into(),
        param_value: value,
        delta_sq_pred: expected_local_displacement(&config, prep.sigma_sq_tr_h()),
        delta_sq_measured,
        c_fit_analytic,
        c_fit_simulated,
    })
}

/// One row per grid value of `param`; grid points run concurrently. Writes `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, param: &str, grid: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::Config(format!(
            "unknown sweep parameter {param:?}; expected one of {SWEEP_PARAMS:?}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    std::fs::create_dir_all(out)?;
    let configs = grid.iter().map(|&v| with_param(cfg, param, v)).collect::<Result<Vec<_>>>()?;
    let rows = configs
        .par_iter()
        .zip(grid.par_iter())
        .map(|(c, &v)| sweep_point(c, param, v))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecomposeReport {
    #[serde(flatten)]
    pub certificate: Certificate,
    /// `‖U_kwon − U_closed‖_F / ‖U_closed‖_F` in eigenplane coordinates.
    pub kwon_agreement: f64,
    /// Relative eigenvalue spread of the position block of `U`.
    pub position_spread: f64,
    pub plane: [usize; 2],
}

/// Certificate plus grid samples of `Φ`, `Ψ_θ`, `Ψ_v` and the current on eigenplanes.
pub fn cmd_decompose(cfg: &ExperimentConfig, out: &Path) -> Result<DecomposeReport> {
    std::fs::create_dir_all(out)?;
    let prep = prepare(cfg)?;
    let config = &cfg.optimizer;
    let dec = closed_form_qu(&prep.model, &prep.noise, config, Restriction::Basis(&prep.basis))?;
    let certificate = stationarity_certificate(&dec, cfg.analysis.probes, cfg.problem.seed);
    let kwon = kwon_decompose(&dec.drift, &dec.diffusion)?;
    let kwon_agreement = (&kwon.u - &dec.u).norm() / dec.u.norm();
    let k = prep.basis.k();
    let pos: Vec<f64> = (0..k).map(|l| dec.u[(l, l)]).collect();
    let (lo, hi) = pos.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let position_spread = (hi - lo) / hi;

    let [pi, pj] = cfg.analysis.plane.unwrap_or([1, k.max(2).min(k)]);
    let (i, j) = (pi - 1, pj.max(1) - 1);
    let kappa = config.kappa();
    let std = |idx: usize| (dec.b[(idx, idx)] / kappa).sqrt();
    let g = cfg.analysis.grid.max(2);
    let lam = config.lambda;
    let rho = &prep.basis.values;

    let r_pos = 3.0 * std(i).max(std(j));
    let axis = super::config::linspace(-r_pos, r_pos, g);
    let mut w = csv::Writer::from_path(out.join("position_plane.csv"))?;
    w.write_record(["x", "y", "phi", "psi_theta"])?;
    for &x in &axis {
        for &y in &axis {
            let phi = (rho[i] + lam) * x * x + (rho[j] + lam) * y * y;
            let psi = 0.5 * (dec.u[(i, i)] * x * x + dec.u[(j, j)] * y * y);
            w.write_record([x.to_string(), y.to_string(), phi.to_string(), psi.to_string()])?;
        }
    }
    w.flush()?;

    let r_vel = 3.0 * std(k + i).max(std(k + j));
    let axis = super::config::linspace(-r_vel, r_vel, g);
    let mut w = csv::Writer::from_path(out.join("velocity_plane.csv"))?;
    w.write_record(["x", "y", "psi_v"])?;
    for &x in &axis {
        for &y in &axis {
            let psi = 0.5 * (dec.u[(k + i, k + i)] * x * x + dec.u[(k + j, k + j)] * y * y);
            w.write_record([x.to_string(), y.to_string(), psi.to_string()])?;
        }
    }
    w.flush()?;

    let ax_a = super::config::linspace(-3.0 * std(i), 3.0 * std(i), g);
    let ax_b = super::config::linspace(-3.0 * std(k + i), 3.0 * std(k + i), g);
    let mut w = csv::Writer::from_path(out.join("phase_plane.csv"))?;
    w.write_record(["a", "b", "psi", "j_a", "j_b"])?;
    for &a in &ax_a {
        for &b in &ax_b {
            let mut x = DVector::zeros(2 * k);
            x[i] = a;
            x[k + i] = b;
            let j = dec.current(&x);
            let psi = 0.5 * x.dot(&(&dec.u * &x));
            w.write_record([a.to_string(), b.to_string(), psi.to_string(), j[i].to_string(), j[k + i].to_string()])?;
        }
    }
    w.flush()?;

    let report = DecomposeReport { certificate, kwon_agreement, position_spread, plane: [i + 1, j + 1] };
    write_json(&out.join("certificate.json"), &report)?;
    Ok(report)
}

/// Power-law fit of `Delta_sq` against `step` in a trajectory CSV; writes `fit.json`.
pub fn cmd_fit(csv_path: &Path, window_start_fraction: f64, out: &Path) -> Result<PowerLawFit> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Argument(format!("{} has no `{name}` column", csv_path.display())))
    };
    let (ci, cv) = (col("step")?, col("Delta_sq")?);
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|e| Error::Argument(format!("bad number {:?}: {e}", &rec[i])))
        };
        points.push((parse(ci)?, parse(cv)?));
    }
    let fit = fit_power_law(&points, window_start_fraction)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("fit.json"), &fit)?;
    Ok(fit)
}

/// Per-mode empirical second moments of projected states, `(Var a_l, Var b_l)`.
pub fn projected_moments(basis: &DMatrix<f64>, mu: &DVector<f64>, states: &[(DVector<f64>, DVector<f64>)]) -> Vec<(f64, f64)> {
    let k = basis.ncols();
    let n = states.len() as f64;
    let mut acc = vec![(0.0, 0.0, 0.0, 0.0); k];
    for (theta, v) in states {
        let a = basis.tr_mul(&(theta - mu));
        let b = basis.tr_mul(v);
        for l in 0..k {
            acc[l].0 += a[l];
            acc[l].1 += a[l] * a[l];
            acc[l].2 += b[l];
            acc[l].3 += b[l] * b[l];
        }
    }
    acc.iter()
        .map(|&(sa, saa, sb, sbb)| (saa / n - (sa / n).powi(2), sbb / n - (sb / n).powi(2)))
        .collect()
}

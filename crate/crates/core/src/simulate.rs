//! Discrete SGD with momentum and weight decay, plus displacement tracking.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{batch_gradient_into, sorted_symmetric_eigen, QuadraticModel, RegressionDataset};
use crate::spectral::EigenBasis;

/// Learning rate, momentum, weight decay and batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub beta: f64,
    #[serde(default)]
    pub lambda: f64,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn new(eta: f64, beta: f64, lambda: f64, batch_size: usize) -> Result<Self> {
        let c = Self { eta, beta, lambda, batch_size };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Argument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Argument(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Argument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Inverse temperature `S(1−β²)`.
    pub fn kappa(&self) -> f64 {
        self.batch_size as f64 * (1.0 - self.beta * self.beta)
    }

    /// Friction `(1−β)/(η(1+β))`.
    pub fn gamma(&self) -> f64 {
        (1.0 - self.beta) / (self.eta * (1.0 + self.beta))
    }

    /// `(η/2)(1+β)`.
    pub fn mass(&self) -> f64 {
        0.5 * self.eta * (1.0 + self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    pub step: usize,
}

impl PhaseState {
    /// Paper initialization: `v_0 = 0`.
    pub fn at_rest(theta: DVector<f64>) -> Self {
        let d = theta.len();
        Self { theta, v: DVector::zeros(d), step: 0 }
    }

    fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// i.i.d. uniform indices each step.
    #[default]
    WithReplacement,
    /// Shuffled passes over the data; a trailing partial batch is dropped.
    EpochShuffled,
}

/// How the stochastic gradient is produced; stored with a trajectory for replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Minibatch { sampling: BatchSampling },
    /// Full gradient plus exact `N(0, σ²H/S)` noise.
    Idealized { sigma_sq: f64 },
}

/// A [`NoiseSpec`] bound to the data it needs.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    Minibatch { dataset: &'a RegressionDataset, sampling: BatchSampling },
    Idealized { sigma_sq: f64 },
}

impl NoiseSource<'_> {
    pub fn spec(&self) -> NoiseSpec {
        match *self {
            NoiseSource::Minibatch { sampling, .. } => NoiseSpec::Minibatch { sampling },
            NoiseSource::Idealized { sigma_sq } => NoiseSpec::Idealized { sigma_sq },
        }
    }
}

/// The update rule given an already-sampled stochastic gradient:
/// `v ← βv − g − λθ`, `θ ← θ + ηv`.
pub fn step_with_gradient(state: &mut PhaseState, config: &OptimizerConfig, g: &DVector<f64>) {
    let (beta, lambda, eta) = (config.beta, config.lambda, config.eta);
    for i in 0..state.theta.len() {
        let v = beta * state.v[i] - g[i] - lambda * state.theta[i];
        state.v[i] = v;
        state.theta[i] += eta * v;
    }
    state.step += 1;
}

/// One SGD step on the minibatch `batch`.
pub fn sgd_step(
    state: &PhaseState,
    config: &OptimizerConfig,
    dataset: &RegressionDataset,
    batch: &[usize],
) -> Result<PhaseState> {
    let g = crate::problem::batch_gradient(dataset, &state.theta, batch)?;
    let mut next = state.clone();
    step_with_gradient(&mut next, config, &g);
    Ok(next)
}

/// Deterministic stream of stochastic gradients for one run.
struct GradientSampler<'a> {
    model: &'a QuadraticModel,
    source: NoiseSource<'a>,
    batch_size: usize,
    rng: ChaCha8Rng,
    batch: Vec<usize>,
    perm: Vec<usize>,
    cursor: usize,
    factor: Option<DMatrix<f64>>,
    z: DVector<f64>,
}

impl<'a> GradientSampler<'a> {
    fn new(
        model: &'a QuadraticModel,
        source: NoiseSource<'a>,
        config: &OptimizerConfig,
        seed: u64,
        factor: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = model.dim();
        let mut perm = Vec::new();
        match source {
            NoiseSource::Minibatch { dataset, sampling } => {
                if dataset.d() != d {
                    return Err(Error::Dimension(format!(
                        "dataset d = {} but model d = {d}",
                        dataset.d()
                    )));
                }
                if sampling == BatchSampling::EpochShuffled && config.batch_size > dataset.n() {
                    return Err(Error::Argument(format!(
                        "batch size {} exceeds N = {} in epoch-shuffled mode",
                        config.batch_size,
                        dataset.n()
                    )));
                }
                perm = (0..dataset.n()).collect();
            }
            NoiseSource::Idealized { sigma_sq } => {
                if !(sigma_sq >= 0.0) {
                    return Err(Error::Argument(format!("sigma_sq must be >= 0, got {sigma_sq}")));
                }
            }
        }
        let factor = match (source, factor) {
            (NoiseSource::Idealized { sigma_sq }, None) => {
                Some(noise_factor(&model.h, sigma_sq / config.batch_size as f64))
            }
            (_, f) => f,
        };
        let cursor = perm.len();
        Ok(Self {
            model,
            source,
            batch_size: config.batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch: vec![0; config.batch_size],
            perm,
            cursor,
            factor,
            z: DVector::zeros(d),
        })
    }

    fn sample(&mut self, theta: &DVector<f64>, out: &mut DVector<f64>) {
        match self.source {
            NoiseSource::Minibatch { dataset, sampling } => {
                let n = dataset.n();
                match sampling {
                    BatchSampling::WithReplacement => {
                        for slot in self.batch.iter_mut() {
                            *slot = self.rng.gen_range(0..n);
                        }
                    }
                    BatchSampling::EpochShuffled => {
                        if self.cursor + self.batch_size > n {
                            self.perm.shuffle(&mut self.rng);
                            self.cursor = 0;
                        }
                        self.batch
                            .copy_from_slice(&self.perm[self.cursor..self.cursor + self.batch_size]);
                        self.cursor += self.batch_size;
                    }
                }
                batch_gradient_into(dataset, theta, &self.batch, out)
                    .expect("sampled indices are in range");
            }
            NoiseSource::Idealized { .. } => {
                for zi in self.z.iter_mut() {
                    *zi = StandardNormal.sample(&mut self.rng);
                }
                out.gemv(1.0, &self.model.h, theta, 0.0);
                *out -= &self.model.b;
                if let Some(f) = &self.factor {
                    out.gemv(1.0, f, &self.z, 1.0);
                }
            }
        }
    }
}

/// `L` with `LLᵀ = scale·H`, via the eigendecomposition of `H`.
pub fn noise_factor(h: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let (vals, mut vecs) = sorted_symmetric_eigen(h);
    for (j, mut col) in vecs.column_iter_mut().enumerate() {
        col *= (scale * vals[j].max(0.0)).sqrt();
    }
    vecs
}

/// Eigenplane coordinates `a_l = q_lᵀ(θ−μ)`, `b_l = q_lᵀv` recorded at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    /// Row `k` holds `a_1..a_k` at step `k`.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub config: OptimizerConfig,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub stride: usize,
    /// States at steps `0, stride, 2·stride, …`.
    pub states: Vec<PhaseState>,
    /// `‖θ_k − θ_{k−1}‖² = η²‖v_k‖²`, index `k = 0..=steps`.
    pub delta_sq: Vec<f64>,
    /// `‖θ_k − θ_0‖²`.
    pub big_delta_sq: Vec<f64>,
    pub loss: Vec<f64>,
    pub projections: Option<Projections>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.delta_sq.len() - 1
    }

    pub fn final_state(&self) -> &PhaseState {
        self.states.last().expect("at least the initial state is recorded")
    }

    /// Mean of `delta_sq` over steps `from..=steps`.
    pub fn mean_delta_sq(&self, from: usize) -> f64 {
        let tail = &self.delta_sq[from.max(1)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Writes `step,t,loss,delta_sq,Delta_sq[,a_1..a_k,b_1..b_k]` for steps `1..=steps`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.projections.as_ref().map_or(0, |p| p.a.ncols());
        let mut header: Vec<String> =
            ["step", "t", "loss", "delta_sq", "Delta_sq"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=k).map(|l| format!("a_{l}")));
        header.extend((1..=k).map(|l| format!("b_{l}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for step in 1..=self.steps() {
            row.clear();
            row.push(step.to_string());
            row.push((self.config.eta * step as f64).to_string());
            row.push(self.loss[step].to_string());
            row.push(self.delta_sq[step].to_string());
            row.push(self.big_delta_sq[step].to_string());
            if let Some(p) = &self.projections {
                row.extend(p.a.row(step).iter().map(|v| v.to_string()));
                row.extend(p.b.row(step).iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub steps: usize,
    pub stride: usize,
    pub seed: u64,
    pub theta0: DVector<f64>,
    /// Initial velocity; `None` means `v_0 = 0`.
    pub v0: Option<DVector<f64>>,
    /// Record eigenplane projections against this basis.
    pub basis: Option<EigenBasis>,
}

impl RunSpec {
    pub fn new(steps: usize, theta0: DVector<f64>, seed: u64) -> Self {
        Self { steps, stride: 1, seed, theta0, v0: None, basis: None }
    }
}

/// A model, an optimizer and a gradient-noise source, ready to run.
pub struct Simulator<'a> {
    model: &'a QuadraticModel,
    config: OptimizerConfig,
    source: NoiseSource<'a>,
    factor: Option<DMatrix<f64>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a QuadraticModel,
        config: OptimizerConfig,
        source: NoiseSource<'a>,
    ) -> Result<Self> {
        config.validate()?;
        let factor = match source {
            NoiseSource::Idealized { sigma_sq } => {
                Some(noise_factor(&model.h, sigma_sq / config.batch_size as f64))
            }
            NoiseSource::Minibatch { .. } => None,
        };
        Ok(Self { model, config, source, factor })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn run(&self, spec: &RunSpec) -> Result<TrajectoryRecord> {
        self.run_observed(spec, |_, _| {})
    }

    /// Runs and calls `observe(step, state)` after every step (and once for step 0).
    pub fn run_observed(
        &self,
        spec: &RunSpec,
        mut observe: impl FnMut(usize, &PhaseState),
    ) -> Result<TrajectoryRecord> {
        let d = self.model.dim();
        if spec.steps == 0 {
            return Err(Error::Argument("steps must be >= 1".into()));
        }
        if spec.stride == 0 {
            return Err(Error::Argument("stride must be >= 1".into()));
        }
        if spec.theta0.len() != d {
            return Err(Error::Dimension(format!("theta0 has length {}, d = {d}", spec.theta0.len())));
        }
        let v0 = spec.v0.clone().unwrap_or_else(|| DVector::zeros(d));
        if v0.len() != d {
            return Err(Error::Dimension(format!("v0 has length {}, d = {d}", v0.len())));
        }
        if let Some(b) = &spec.basis {
            if b.d() != d {
                return Err(Error::Dimension(format!("basis d = {}, model d = {d}", b.d())));
            }
        }
        let mut sampler =
            GradientSampler::new(self.model, self.source, &self.config, spec.seed, self.factor.clone())?;

        let eta = self.config.eta;
        let mut state = PhaseState { theta: spec.theta0.clone(), v: v0, step: 0 };
        let mut states = vec![state.clone()];
        let mut delta_sq = Vec::with_capacity(spec.steps + 1);
        let mut big_delta_sq = Vec::with_capacity(spec.steps + 1);
        let mut loss = Vec::with_capacity(spec.steps + 1);
        delta_sq.push(eta * eta * state.v.norm_squared());
        big_delta_sq.push(0.0);
        loss.push(self.model.loss(&state.theta));
        let mut projections = spec.basis.as_ref().map(|b| Projections {
            a: DMatrix::zeros(spec.steps + 1, b.k()),
            b: DMatrix::zeros(spec.steps + 1, b.k()),
        });
        let record_projection = |p: &mut Projections, basis: &EigenBasis, s: &PhaseState| {
            let a = basis.vectors.tr_mul(&(&s.theta - &self.model.mu));
            let b = basis.vectors.tr_mul(&s.v);
            p.a.row_mut(s.step).copy_from(&a.transpose());
            p.b.row_mut(s.step).copy_from(&b.transpose());
        };
        if let (Some(p), Some(b)) = (projections.as_mut(), spec.basis.as_ref()) {
            record_projection(p, b, &state);
        }
        observe(0, &state);

        let mut g = DVector::zeros(d);
        for _ in 0..spec.steps {
            sampler.sample(&state.theta, &mut g);
            let prev = state.clone();
            step_with_gradient(&mut state, &self.config, &g);
            if !state.is_finite() {
                return Err(Error::Diverged { step: state.step, last_finite: Box::new(prev) });
            }
            delta_sq.push(eta * eta * state.v.norm_squared());
            big_delta_sq.push((&state.theta - &spec.theta0).norm_squared());
            loss.push(self.model.loss(&state.theta));
            if let (Some(p), Some(b)) = (projections.as_mut(), spec.basis.as_ref()) {
                record_projection(p, b, &state);
            }
            if state.step % spec.stride == 0 {
                states.push(state.clone());
            }
            observe(state.step, &state);
        }

        Ok(TrajectoryRecord {
            config: self.config,
            noise: self.source.spec(),
            seed: spec.seed,
            stride: spec.stride,
            states,
            delta_sq,
            big_delta_sq,
            loss,
            projections,
        })
    }

    /// Independent replicas, one per seed, run concurrently.
    pub fn run_replicas(&self, spec: &RunSpec, seeds: &[u64]) -> Result<Vec<TrajectoryRecord>> {
        seeds
            .par_iter()
            .map(|&seed| self.run(&RunSpec { seed, ..spec.clone() }))
            .collect()
    }

    /// Replays the batches of `traj` and returns the worst finite-difference
    /// residual `‖(θ_{k+1}−θ_k)/η − β(θ_k−θ_{k−1})/η + λθ_k + g_B(θ_k)‖∞`.
    pub fn finite_difference_residual(&self, traj: &TrajectoryRecord) -> Result<f64> {
        if traj.stride != 1 {
            return Err(Error::Argument(format!(
                "finite-difference replay needs stride 1, got {}",
                traj.stride
            )));
        }
        if traj.noise != self.source.spec() || traj.config != self.config {
            return Err(Error::Argument("trajectory was produced by a different setup".into()));
        }
        let mut sampler =
            GradientSampler::new(self.model, self.source, &self.config, traj.seed, self.factor.clone())?;
        let (eta, beta, lambda) = (self.config.eta, self.config.beta, self.config.lambda);
        let mut g = DVector::zeros(self.model.dim());
        let mut worst = 0.0f64;
        for k in 0..traj.states.len() - 1 {
            let cur = &traj.states[k];
            let next = &traj.states[k + 1];
            sampler.sample(&cur.theta, &mut g);
            for i in 0..g.len() {
                let back = if k == 0 {
                    cur.v[i]
                } else {
                    (cur.theta[i] - traj.states[k - 1].theta[i]) / eta
                };
                let r = (next.theta[i] - cur.theta[i]) / eta - beta * back
                    + lambda * cur.theta[i]
                    + g[i];
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }
}

/// Convenience wrapper around [`Simulator::run`].
pub fn run(
    model: &QuadraticModel,
    config: &OptimizerConfig,
    source: NoiseSource<'_>,
    spec: &RunSpec,
) -> Result<TrajectoryRecord> {
    Simulator::new(model, *config, source)?.run(spec)
}

pub fn finite_difference_residual(
    traj: &TrajectoryRecord,
    model: &QuadraticModel,
    source: NoiseSource<'_>,
) -> Result<f64> {
    Simulator::new(model, traj.config, source)?.finite_difference_residual(traj)
}

/// Slowest relaxation rate over the spectrum, in units of inverse continuous time.
pub fn slowest_relaxation_rate(spectrum: &[f64], config: &OptimizerConfig) -> f64 {
    let gamma = config.gamma();
    spectrum
        .iter()
        .map(|&rho| {
            let w2 = 2.0 * (rho + config.lambda) / (config.eta * (1.0 + config.beta));
            if w2 < gamma * gamma {
                // γ − √(γ² − ω²), written without cancellation.
                w2 / (gamma + (gamma * gamma - w2).sqrt())
            } else {
                gamma
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Ten relaxation times of the slowest mode, in steps, capped at `cap`.
pub fn default_burn_in(spectrum: &[f64], config: &OptimizerConfig, cap: usize) -> usize {
    let rate = slowest_relaxation_rate(spectrum, config);
    let steps = 10.0 / (rate * config.eta);
    if steps.is_finite() {
        (steps.ceil() as usize).min(cap)
    } else {
        cap
    }
}

/// Seed for replica `i` derived from a base seed (splitmix64 finalizer).
pub fn replica_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_quadratic, full_gradient, generate_regression};

    fn setup(sigma: f64) -> (RegressionDataset, QuadraticModel) {
        let tb = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let ds = generate_regression(64, 3, &tb, sigma, 5).unwrap();
        let m = build_quadratic(&ds, 0.0).unwrap();
        (ds, m)
    }

    #[test]
    fn derived_constants() {
        let c = OptimizerConfig::new(1e-5, 0.9, 0.0, 512).unwrap();
        assert!((c.kappa() - 97.28).abs() < 1e-10);
        assert!((c.gamma() - 0.1 / (1e-5 * 1.9)).abs() < 1e-6);
        assert!((c.mass() - 0.5e-5 * 1.9).abs() < 1e-20);
        assert!(OptimizerConfig::new(0.0, 0.9, 0.0, 1).is_err());
        assert!(OptimizerConfig::new(0.1, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn plain_gradient_descent_when_no_momentum() {
        let (ds, m) = setup(0.3);
        let c = OptimizerConfig::new(0.05, 0.0, 0.0, 64).unwrap();
        let s = PhaseState::at_rest(DVector::from_vec(vec![0.2, 0.1, -0.3]));
        let all: Vec<usize> = (0..64).collect();
        let next = sgd_step(&s, &c, &ds, &all).unwrap();
        let expect = &s.theta - full_gradient(&m, &s.theta).unwrap() * 0.05;
        assert!((next.theta - expect).norm() < 1e-14);
    }

    #[test]
    fn first_step_from_rest() {
        let (ds, m) = setup(0.3);
        let c = OptimizerConfig::new(0.05, 0.9, 0.1, 64).unwrap();
        let s = PhaseState::at_rest(DVector::from_vec(vec![0.2, 0.1, -0.3]));
        let all: Vec<usize> = (0..64).collect();
        let next = sgd_step(&s, &c, &ds, &all).unwrap();
        let g = full_gradient(&m, &s.theta).unwrap() + &s.theta * 0.1;
        assert!((next.theta - (&s.theta - g * 0.05)).norm() < 1e-14);
    }

    #[test]
    fn fixed_point_without_noise() {
        let (ds, m) = setup(0.0);
        let c = OptimizerConfig::new(0.1, 0.9, 0.0, 64).unwrap();
        let src = NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::EpochShuffled };
        let rec = run(&m, &c, src, &RunSpec::new(200, m.mu.clone(), 1)).unwrap();
        assert!(rec.delta_sq.iter().all(|&x| x < 1e-28));
    }

    #[test]
    fn huge_step_diverges() {
        let (ds, m) = setup(0.3);
        let c = OptimizerConfig::new(1e3, 0.0, 0.0, 4).unwrap();
        let src = NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::WithReplacement };
        match run(&m, &c, src, &RunSpec::new(10_000, DVector::zeros(3), 1)) {
            Err(Error::Diverged { step, last_finite }) => {
                assert!(step > 0);
                assert_eq!(last_finite.step + 1, step);
                assert!(last_finite.theta.iter().all(|x| x.is_finite()));
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.steps())),
        }
    }

    #[test]
    fn record_invariants_and_determinism() {
        let (ds, m) = setup(0.3);
        let c = OptimizerConfig::new(0.02, 0.9, 0.01, 8).unwrap();
        let src = NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::WithReplacement };
        let spec = RunSpec::new(300, DVector::zeros(3), 42);
        let a = run(&m, &c, src, &spec).unwrap();
        let b = run(&m, &c, src, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.big_delta_sq[0], 0.0);
        for k in 1..=a.steps() {
            let v = &a.states[k].v;
            assert_eq!(a.delta_sq[k], c.eta * c.eta * v.norm_squared());
            let diff = (&a.states[k].theta - &a.states[k - 1].theta).norm_squared();
            assert!((diff - a.delta_sq[k]).abs() <= 1e-12 * a.delta_sq[k].max(1e-300) + 1e-30);
        }
    }

    #[test]
    fn finite_difference_identity() {
        let (ds, m) = setup(0.3);
        for beta in [0.0, 0.9, 0.99] {
            let c = OptimizerConfig::new(0.01, beta, 0.05, 8).unwrap();
            let src =
                NoiseSource::Minibatch { dataset: &ds, sampling: BatchSampling::WithReplacement };
            let sim = Simulator::new(&m, c, src).unwrap();
            let rec = sim.run(&RunSpec::new(500, DVector::zeros(3), 3)).unwrap();
            assert!(sim.finite_difference_residual(&rec).unwrap() < 1e-10);

            let mut bad = rec.clone();
            bad.states[250].theta[1] += 1e-3;
            assert!(sim.finite_difference_residual(&bad).unwrap() > 1e-5);

            let mut strided = rec.clone();
            strided.stride = 2;
            assert!(sim.finite_difference_residual(&strided).is_err());
        }
        let c = OptimizerConfig::new(0.01, 0.9, 0.0, 8).unwrap();
        let sim = Simulator::new(&m, c, NoiseSource::Idealized { sigma_sq: 0.2 }).unwrap();
        let rec = sim.run(&RunSpec::new(500, DVector::zeros(3), 3)).unwrap();
        assert!(sim.finite_difference_residual(&rec).unwrap() < 1e-10);
    }

    #[test]
    fn burn_in_is_capped() {
        let c = OptimizerConfig::new(0.01, 0.9, 0.0, 8).unwrap();
        assert_eq!(default_burn_in(&[1.0], &c, 50), 50);
        let uncapped = default_burn_in(&[1.0, 10.0], &c, usize::MAX);
        let rate = slowest_relaxation_rate(&[1.0], &c);
        assert_eq!(uncapped, (10.0 / (rate * 0.01)).ceil() as usize);
    }

    #[test]
    fn replica_seeds_distinct() {
        let seeds: Vec<u64> = (0..100).map(|i| replica_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }
}

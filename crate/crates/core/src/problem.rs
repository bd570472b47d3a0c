//! Least-squares problems, synthetic data and gradient noise.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Design matrix, labels and (when synthetic) the generative ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    theta_bar: Option<DVector<f64>>,
    sigma_gen: Option<f64>,
    seed: Option<u64>,
    scales: Option<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "design matrix must be at least 1x1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("dataset contains non-finite entries".into()));
        }
        Ok(Self { x, y, theta_bar: None, sigma_gen: None, seed: None, scales: None })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn theta_bar(&self) -> Option<&DVector<f64>> {
        self.theta_bar.as_ref()
    }

    pub fn sigma_gen(&self) -> Option<f64> {
        self.sigma_gen
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.scales.as_deref()
    }

    /// Residuals `x_iᵀθ − y_i` for every sample.
    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.x * theta - &self.y
    }

    /// Training loss `‖Y − Xθ‖² / (2N)`.
    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.residuals(theta).norm_squared() / (2.0 * self.n() as f64)
    }

    /// Writes `<stem>.csv` (columns x_0..x_{d-1}, y) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.y[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;

        let json_path = dir.join(format!("{stem}.json"));
        let meta = DatasetSidecar {
            n: self.n(),
            d: self.d(),
            seed: self.seed,
            theta_bar: self.theta_bar.as_ref().map(|t| t.iter().copied().collect()),
            sigma_gen: self.sigma_gen,
            scales: self.scales.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &meta)?;
        Ok((csv_path, json_path))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: DatasetSidecar =
            serde_json::from_reader(File::open(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut data = Vec::with_capacity(meta.n * (meta.d + 1));
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != meta.d + 1 {
                return Err(Error::Dimension(format!(
                    "row has {} fields, expected {}",
                    rec.len(),
                    meta.d + 1
                )));
            }
            for field in rec.iter() {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Argument(format!("bad number {field:?}: {e}")))?,
                );
            }
        }
        if data.len() != meta.n * (meta.d + 1) {
            return Err(Error::Dimension(format!(
                "sidecar says n={} but csv has {} rows",
                meta.n,
                data.len() / (meta.d + 1)
            )));
        }
        let full = DMatrix::from_row_slice(meta.n, meta.d + 1, &data);
        let x = full.columns(0, meta.d).into_owned();
        let y = full.column(meta.d).into_owned();
        let mut ds = Self::new(x, y)?;
        ds.theta_bar = meta.theta_bar.map(DVector::from_vec);
        ds.sigma_gen = meta.sigma_gen;
        ds.seed = meta.seed;
        ds.scales = meta.scales;
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetSidecar {
    n: usize,
    d: usize,
    seed: Option<u64>,
    theta_bar: Option<Vec<f64>>,
    sigma_gen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<f64>>,
}

/// Draws `X` i.i.d. standard normal and `Y = Xθ̄ + σ_gen ε`.
pub fn generate_regression(
    n: usize,
    d: usize,
    theta_bar: &DVector<f64>,
    sigma_gen: f64,
    seed: u64,
) -> Result<RegressionDataset> {
    if theta_bar.len() != d {
        return Err(Error::Dimension(format!("theta_bar has length {}, d = {d}", theta_bar.len())));
    }
    generate_regression_scaled(n, theta_bar, sigma_gen, None, seed)
}

/// Like [`generate_regression`], but column `j` of `X` is multiplied by
/// `scales[j]`, which puts roughly `scales[j]²` on the diagonal of `H`.
pub fn generate_regression_scaled(
    n: usize,
    theta_bar: &DVector<f64>,
    sigma_gen: f64,
    scales: Option<&[f64]>,
    seed: u64,
) -> Result<RegressionDataset> {
    let d = theta_bar.len();
    if n == 0 || d == 0 {
        return Err(Error::Dimension(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    if !(sigma_gen >= 0.0) || !sigma_gen.is_finite() {
        return Err(Error::Argument(format!("sigma_gen must be >= 0, got {sigma_gen}")));
    }
    if let Some(s) = scales {
        if s.len() != d {
            return Err(Error::Dimension(format!("{} scales for d = {d}", s.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major draw order so the sample for row i does not depend on n.
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = match scales {
                Some(s) => s[j] * z,
                None => z,
            };
        }
    }
    let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = &x * theta_bar + eps * sigma_gen;
    let mut ds = RegressionDataset::new(x, y)?;
    ds.theta_bar = Some(theta_bar.clone());
    ds.sigma_gen = Some(sigma_gen);
    ds.seed = Some(seed);
    ds.scales = scales.map(|s| s.to_vec());
    Ok(ds)
}

/// `H`, `b`, the ridge solution `μ` and the weight decay used to form it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub mu: DVector<f64>,
    pub lambda: f64,
    /// `YᵀY / (2N)`, so that `loss` matches the dataset's training loss.
    pub label_energy: f64,
}

impl QuadraticModel {
    /// Builds a model straight from `H` and `b` (no dataset behind it).
    pub fn from_parts(h: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<Self> {
        let d = h.nrows();
        if d == 0 || h.ncols() != d || b.len() != d {
            return Err(Error::Dimension(format!(
                "H is {}x{}, b has length {}",
                h.nrows(),
                h.ncols(),
                b.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut h = h;
        symmetrize_upper(&mut h);
        let mu = ridge_solve(&h, &b, lambda)?;
        Ok(Self { h, b, mu, lambda, label_energy: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Unregularized loss `½θᵀHθ − bᵀθ + YᵀY/(2N)`.
    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.h * theta)) - self.b.dot(theta) + self.label_energy
    }

    /// `½(θ−μ)ᵀH(θ−μ) + (λ/2)‖θ‖²`.
    pub fn regularized_excess_loss(&self, theta: &DVector<f64>) -> f64 {
        let e = theta - &self.mu;
        0.5 * e.dot(&(&self.h * &e)) + 0.5 * self.lambda * theta.norm_squared()
    }

    /// Eigenvalues of `H` in non-increasing order, with matching eigenvectors.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_symmetric_eigen(&self.h)
    }
}

pub fn build_quadratic(dataset: &RegressionDataset, lambda: f64) -> Result<QuadraticModel> {
    let nf = dataset.n() as f64;
    let mut h = dataset.x.tr_mul(&dataset.x) / nf;
    symmetrize_upper(&mut h);
    let b = dataset.x.tr_mul(&dataset.y) / nf;
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mu = ridge_solve(&h, &b, lambda)?;
    Ok(QuadraticModel {
        h,
        b,
        mu,
        lambda,
        label_energy: dataset.y.norm_squared() / (2.0 * nf),
    })
}

fn symmetrize_upper(h: &mut DMatrix<f64>) {
    let d = h.nrows();
    for i in 0..d {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
}

fn ridge_solve(h: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = h.nrows();
    let reg = h + DMatrix::identity(d, d) * lambda;
    let chol = reg.clone().cholesky();
    // A small pivot only hints at near-singularity; the eigen check decides.
    let suspicious = match &chol {
        Some(ch) => {
            let l = ch.l_dirty();
            let top = reg.diagonal().max().max(f64::MIN_POSITIVE);
            (0..d).any(|i| l[(i, i)] * l[(i, i)] <= top * 1e-12)
        }
        None => true,
    };
    if suspicious {
        let (smallest, v) = smallest_eigenpair(&reg);
        let scale = power_norm(&reg).max(f64::MIN_POSITIVE);
        if smallest <= scale * 1e-13 || chol.is_none() {
            return Err(Error::Singular {
                context: "H + lambda*I".into(),
                null_direction: v.iter().copied().collect(),
            });
        }
    }
    let ch = chol.expect("checked above");
    let mut mu = ch.solve(b);
    // One step of iterative refinement.
    let r = b - &reg * &mu;
    mu += ch.solve(&r);
    Ok(mu)
}

/// Largest eigenvalue of a PSD matrix by a few power steps.
fn power_norm(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..30 {
        let w = m * &v;
        est = w.norm();
        if est == 0.0 {
            return 0.0;
        }
        v = w / est;
    }
    est
}

/// Smallest eigenpair of a symmetric PSD matrix by shifted inverse iteration.
fn smallest_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let d = m.nrows();
    let top = m.diagonal().max().max(f64::MIN_POSITIVE);
    let mut shift = top * 1e-10;
    let ch = loop {
        if let Some(ch) = (m + DMatrix::identity(d, d) * shift).cholesky() {
            break ch;
        }
        shift *= 100.0;
    };
    let mut v = DVector::from_fn(d, |i, _| 1.0 + ((i * 31) % 17) as f64 * 0.05);
    v.normalize_mut();
    for _ in 0..8 {
        v = ch.solve(&v);
        v.normalize_mut();
    }
    (v.dot(&(m * &v)), v)
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_columns(
        &order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>(),
    );
    (vals, vecs)
}

pub fn full_gradient(model: &QuadraticModel, theta: &DVector<f64>) -> Result<DVector<f64>> {
    if theta.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "theta has length {}, model dimension {}",
            theta.len(),
            model.dim()
        )));
    }
    Ok(&model.h * theta - &model.b)
}

/// Mean of per-sample gradients `(x_iᵀθ − y_i) x_i` over `batch`.
pub fn batch_gradient(
    dataset: &RegressionDataset,
    theta: &DVector<f64>,
    batch: &[usize],
) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if theta.len() != dataset.d() {
        return Err(Error::Dimension(format!(
            "theta has length {}, dataset d = {}",
            theta.len(),
            dataset.d()
        )));
    }
    let n = dataset.n();
    let mut g = DVector::zeros(dataset.d());
    batch_gradient_into(dataset, theta, batch, &mut g).map_err(|i| {
        Error::Argument(format!("batch index {i} out of range for N = {n}"))
    })?;
    Ok(g)
}

/// Allocation-free kernel behind [`batch_gradient`]; returns the first bad index on error.
pub(crate) fn batch_gradient_into(
    dataset: &RegressionDataset,
    theta: &DVector<f64>,
    batch: &[usize],
    out: &mut DVector<f64>,
) -> std::result::Result<(), usize> {
    out.fill(0.0);
    let n = dataset.n();
    for &i in batch {
        if i >= n {
            return Err(i);
        }
        let row = dataset.x.row(i);
        let r = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>() - dataset.y[i];
        for (o, xv) in out.iter_mut().zip(row.iter()) {
            *o += r * xv;
        }
    }
    *out /= batch.len() as f64;
    Ok(())
}

/// `(1/N) Σ g_i g_iᵀ − g gᵀ` at `θ`.
pub fn noise_covariance_empirical(
    dataset: &RegressionDataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if theta.len() != dataset.d() {
        return Err(Error::Dimension(format!(
            "theta has length {}, dataset d = {}",
            theta.len(),
            dataset.d()
        )));
    }
    let nf = dataset.n() as f64;
    let r = dataset.residuals(theta);
    let mut weighted = dataset.x.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= r[i];
    }
    let g = dataset.x.tr_mul(&r) / nf;
    let mut sigma = weighted.tr_mul(&weighted) / nf - &g * g.transpose();
    symmetrize_upper(&mut sigma);
    Ok(sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceMode {
    /// `Σ = σ² H`.
    ScaledHessian,
    /// A measured covariance matrix, carried as-is.
    Empirical(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_sq: f64,
    pub covariance_mode: CovarianceMode,
}

impl NoiseModel {
    pub fn scaled_hessian(sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
            return Err(Error::Argument(format!("sigma_sq must be >= 0, got {sigma_sq}")));
        }
        Ok(Self { sigma_sq, covariance_mode: CovarianceMode::ScaledHessian })
    }

    /// Empirical covariance at `θ`; `sigma_sq` is the least-squares fit of `Σ̂ ≈ σ²H`.
    pub fn empirical(
        dataset: &RegressionDataset,
        model: &QuadraticModel,
        theta: &DVector<f64>,
    ) -> Result<Self> {
        let sigma = noise_covariance_empirical(dataset, theta)?;
        let hh = model.h.norm_squared();
        let sigma_sq = if hh > 0.0 { sigma.dot(&model.h) / hh } else { 0.0 };
        Ok(Self { sigma_sq, covariance_mode: CovarianceMode::Empirical(sigma) })
    }

    pub fn covariance(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.covariance_mode {
            CovarianceMode::ScaledHessian => h * self.sigma_sq,
            CovarianceMode::Empirical(s) => s.clone(),
        }
    }
}

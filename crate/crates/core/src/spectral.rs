//! Hessian-vector products, subspace iteration and eigenplane projections.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{sorted_symmetric_eigen, QuadraticModel, RegressionDataset};

/// Anything that can apply a symmetric PSD Hessian to a vector.
pub trait HessianOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl HessianOperator for QuadraticModel {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.h * v
    }
}

impl HessianOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }
}

/// `XᵀXv/N` without forming `H`; cheaper when `N < d`.
impl HessianOperator for RegressionDataset {
    fn dim(&self) -> usize {
        self.d()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.x().tr_mul(&(self.x() * v)) / self.n() as f64
    }
}

pub fn hvp<H: HessianOperator + ?Sized>(op: &H, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != op.dim() {
        return Err(Error::Dimension(format!("v has length {}, operator dim {}", v.len(), op.dim())));
    }
    Ok(op.apply(v))
}

/// Top-k eigenpairs of a Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    pub residuals: DVector<f64>,
    pub seed: u64,
    pub iters: usize,
}

impl EigenBasis {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn d(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// Exact basis from a dense symmetric eigensolver, truncated to `k`.
    pub fn dense(h: &DMatrix<f64>, k: usize) -> Result<Self> {
        if k == 0 || k > h.nrows() {
            return Err(Error::Argument(format!("k = {k} must lie in 1..={}", h.nrows())));
        }
        let (vals, vecs) = sorted_symmetric_eigen(h);
        let vectors = vecs.columns(0, k).into_owned();
        let values = vals.rows(0, k).into_owned();
        let residuals = column_residuals(h, &vectors, &values);
        Ok(Self { vectors, values, residuals, seed: 0, iters: 0 })
    }

    /// Coordinates `Q_kᵀ x`.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(x)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record((0..self.k()).map(|j| format!("q_{}", j + 1)))?;
        for i in 0..self.d() {
            w.write_record(self.vectors.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        let json_path = dir.join(format!("{stem}.json"));
        let meta = BasisSidecar {
            k: self.k(),
            d: self.d(),
            values: self.values.iter().copied().collect(),
            residuals: self.residuals.iter().copied().collect(),
            seed: self.seed,
            iters: self.iters,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &meta)?;
        Ok((csv_path, json_path))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: BasisSidecar =
            serde_json::from_reader(File::open(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut data = Vec::with_capacity(meta.d * meta.k);
        for rec in r.records() {
            for field in rec?.iter() {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Argument(format!("bad number {field:?}: {e}")))?,
                );
            }
        }
        if data.len() != meta.d * meta.k {
            return Err(Error::Dimension(format!(
                "basis file holds {} numbers, expected {}x{}",
                data.len(),
                meta.d,
                meta.k
            )));
        }
        Ok(Self {
            vectors: DMatrix::from_row_slice(meta.d, meta.k, &data),
            values: DVector::from_vec(meta.values),
            residuals: DVector::from_vec(meta.residuals),
            seed: meta.seed,
            iters: meta.iters,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisSidecar {
    k: usize,
    d: usize,
    values: Vec<f64>,
    residuals: Vec<f64>,
    seed: u64,
    iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceOptions {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Extra columns carried beyond `k` (capped at `d`); speeds convergence of the k-th pair.
    pub oversample: usize,
}

impl SubspaceOptions {
    pub fn new(k: usize) -> Self {
        Self { k, max_iters: 10, tol: 1e-10, seed: 0, oversample: 10 }
    }
}

/// Block power iteration with a Rayleigh-Ritz step after every sweep.
pub struct SubspaceIteration<'a, H: HessianOperator + ?Sized> {
    op: &'a H,
    opts: SubspaceOptions,
    block: DMatrix<f64>,
    ritz: DVector<f64>,
    hq: DMatrix<f64>,
    iters: usize,
}

impl<'a, H: HessianOperator + ?Sized> SubspaceIteration<'a, H> {
    pub fn new(op: &'a H, opts: SubspaceOptions) -> Result<Self> {
        let d = op.dim();
        if opts.k == 0 || opts.k > d {
            return Err(Error::Argument(format!("k = {} must lie in 1..={d}", opts.k)));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::Argument(format!("tol must be positive, got {}", opts.tol)));
        }
        let p = (opts.k + opts.oversample).min(d);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut g = DMatrix::zeros(d, p);
        for j in 0..p {
            for i in 0..d {
                g[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let q = orthonormalize(g);
        let mut it = Self {
            op,
            opts,
            block: q,
            ritz: DVector::zeros(p),
            hq: DMatrix::zeros(d, p),
            iters: 0,
        };
        it.hq = it.apply_block(&it.block);
        it.rayleigh_ritz();
        Ok(it)
    }

    fn apply_block(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..q.ncols())
            .into_par_iter()
            .map(|j| self.op.apply(&q.column(j).into_owned()))
            .collect();
        DMatrix::from_columns(&cols)
    }

    fn rayleigh_ritz(&mut self) {
        let mut t = self.block.tr_mul(&self.hq);
        t = (&t + t.transpose()) * 0.5;
        let (vals, vecs) = sorted_symmetric_eigen(&t);
        self.block = &self.block * &vecs;
        self.hq = &self.hq * &vecs;
        self.ritz = vals;
    }

    /// One sweep: multiply, re-orthonormalize, Rayleigh-Ritz.
    pub fn step(&mut self) {
        let q = orthonormalize(self.hq.clone());
        self.block = q;
        self.hq = self.apply_block(&self.block);
        self.rayleigh_ritz();
        self.iters += 1;
    }

    /// Current Ritz values for all carried columns, non-increasing.
    pub fn ritz_values(&self) -> &DVector<f64> {
        &self.ritz
    }

    pub fn residuals(&self) -> DVector<f64> {
        let k = self.opts.k;
        DVector::from_fn(k, |i, _| {
            (self.hq.column(i) - self.block.column(i) * self.ritz[i]).norm()
        })
    }

    pub fn converged(&self) -> bool {
        let scale = self.ritz[0].abs().max(f64::MIN_POSITIVE);
        self.residuals().max() <= self.opts.tol * scale
    }

    pub fn orthogonality_error(&self) -> f64 {
        let p = self.block.ncols();
        (self.block.tr_mul(&self.block) - DMatrix::identity(p, p)).norm()
    }

    pub fn iters(&self) -> usize {
        self.iters
    }

    pub fn finish(self) -> EigenBasis {
        let k = self.opts.k;
        let residuals = self.residuals();
        EigenBasis {
            vectors: self.block.columns(0, k).into_owned(),
            values: self.ritz.rows(0, k).into_owned(),
            residuals,
            seed: self.opts.seed,
            iters: self.iters,
        }
    }
}

/// Top-k eigenpairs; stops early once every residual is below `tol·ρ_1`.
pub fn subspace_iteration<H: HessianOperator + ?Sized>(
    op: &H,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<EigenBasis> {
    subspace_iteration_with(op, SubspaceOptions { k, max_iters, tol, seed, ..SubspaceOptions::new(k) })
}

pub fn subspace_iteration_with<H: HessianOperator + ?Sized>(
    op: &H,
    opts: SubspaceOptions,
) -> Result<EigenBasis> {
    let mut it = SubspaceIteration::new(op, opts)?;
    while it.iters() < opts.max_iters && !it.converged() {
        it.step();
    }
    Ok(it.finish())
}

/// Householder QR, returning the thin orthonormal factor with a sign convention
/// that keeps the diagonal of `R` non-negative.
fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn column_residuals(h: &DMatrix<f64>, vecs: &DMatrix<f64>, vals: &DVector<f64>) -> DVector<f64> {
    let hv = h * vecs;
    DVector::from_fn(vals.len(), |i, _| (hv.column(i) - vecs.column(i) * vals[i]).norm())
}

/// `(q_iᵀ(θ−μ), q_iᵀv)`.
pub fn project_phase(
    basis: &EigenBasis,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    mu: &DVector<f64>,
    index: usize,
) -> Result<(f64, f64)> {
    if index >= basis.k() {
        return Err(Error::Argument(format!("mode index {index} out of range for k = {}", basis.k())));
    }
    let d = basis.d();
    if theta.len() != d || v.len() != d || mu.len() != d {
        return Err(Error::Dimension(format!("phase state does not match basis dimension {d}")));
    }
    let q = basis.vectors.column(index);
    let a = q.iter().zip(theta.iter().zip(mu.iter())).map(|(qi, (t, m))| qi * (t - m)).sum();
    let b = q.dot(v);
    Ok((a, b))
}

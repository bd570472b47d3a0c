//! The splitting `A = (D+Q)U`, the modified loss `Ψ = ½xᵀUx` and the stationary current.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::solve_lyapunov;
use crate::problem::{sorted_symmetric_eigen, CovarianceMode, NoiseModel, QuadraticModel};
use crate::simulate::OptimizerConfig;
use crate::spectral::EigenBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖AB + BAᵀ − 2D‖_F / ‖D‖_F`.
    pub lyapunov: f64,
    /// `‖A − (D+Q)U‖_F / ‖A‖_F`.
    pub reconstruction: f64,
    /// `‖Q + Qᵀ‖_F / ‖Q‖_F`, zero when `Q = 0`.
    pub skew: f64,
}

/// `A = (D+Q)U` with `Q` skew, `U` symmetric positive definite and `B = U⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Point the quadratic forms are centred on (`[μ;0]` in parameter coordinates).
    pub center: DVector<f64>,
    pub residuals: Residuals,
}

fn rel(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn skew_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

impl Decomposition {
    fn from_parts(
        drift: DMatrix<f64>,
        diffusion: DMatrix<f64>,
        q: DMatrix<f64>,
        u: DMatrix<f64>,
        b: DMatrix<f64>,
        center: DVector<f64>,
    ) -> Self {
        let lyap = (&drift * &b + &b * drift.transpose() - &diffusion * 2.0).norm();
        let recon = (&drift - (&diffusion + &q) * &u).norm();
        let skew = (&q + q.transpose()).norm();
        let residuals = Residuals {
            lyapunov: rel(lyap, diffusion.norm()),
            reconstruction: rel(recon, drift.norm()),
            skew: rel(skew, q.norm()),
        };
        Self { drift, diffusion, q, u, b, center, residuals }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn with_center(mut self, center: DVector<f64>) -> Self {
        self.center = center;
        self
    }

    pub fn modified_loss(&self) -> ModifiedLoss {
        let m = self.dim() / 2;
        let curvature = &self.u * 0.5;
        ModifiedLoss {
            center: self.center.clone(),
            position_part: curvature.view((0, 0), (m, m)).into_owned(),
            velocity_part: curvature.view((m, m), (m, m)).into_owned(),
            curvature,
        }
    }

    /// `−QU(x − center)`, the rotational part of the drift.
    pub fn current(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.q * (&self.u * (x - &self.center)))
    }

    /// `∇Ψ = U(x − center)`.
    pub fn potential_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.u * (x - &self.center)
    }
}

/// Unique decomposition of a stable drift `A` with diffusion `D`.
///
/// A symmetric `A` uses the eigenbasis formula
/// `Q̃_ij = (λ_i−λ_j)/(λ_i+λ_j)·D̃_ij`; any other `A` goes through the
/// Lyapunov solution `B` and `Q = ½(AB − BAᵀ)`.
pub fn kwon_decompose(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<Decomposition> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || d.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "drift {:?} and diffusion {:?} must be square and equal",
            a.shape(),
            d.shape()
        )));
    }
    let asym = (a - a.transpose()).norm();
    let q = if asym <= 1e-14 * a.norm() {
        let (lam, v) = sorted_symmetric_eigen(&symmetrize(a));
        let dt = v.tr_mul(d) * &v;
        let mut qt = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s = lam[i] + lam[j];
                if s.abs() <= 1e-14 * lam.amax() {
                    return Err(Error::Decomposition(format!(
                        "eigenvalues {} and {} of the drift sum to zero",
                        lam[i], lam[j]
                    )));
                }
                qt[(i, j)] = (lam[i] - lam[j]) / s * dt[(i, j)];
            }
        }
        skew_part(&(&v * qt * v.transpose()))
    } else {
        let b = symmetrize(&solve_lyapunov(a, &(d * 2.0))?);
        skew_part(&(a * &b - d))
    };
    let dq = d + &q;
    let lu = dq.clone().lu();
    let u = lu.solve(a).ok_or_else(|| {
        Error::Decomposition(
            "D + Q is singular, so U = (D+Q)^-1 A is undefined (degenerate noise directions)"
                .into(),
        )
    })?;
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Decomposition("D + Q is numerically singular".into()));
    }
    let u = symmetrize(&u);
    let b = u
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Decomposition("U is singular".into()))?;
    let b = symmetrize(&b);
    Ok(Decomposition::from_parts(a.clone(), d.clone(), q, u, b, DVector::zeros(n)))
}

/// Where the closed-form decomposition is assembled.
#[derive(Debug, Clone, Copy)]
pub enum Restriction<'a> {
    /// Parameter coordinates `[θ; v]`; needs `H` invertible.
    Full,
    /// Eigenplane coordinates `[a_1..a_k; b_1..b_k]` of the given basis.
    Basis(&'a EigenBasis),
}

/// Explicit blocks for SGD with `Σ = σ²H`:
/// `Q = [[0, −σ²H], [σ²H, 0]]`,
/// `U = diag(2(ησ²(1+β))⁻¹H⁻¹(H+λI), σ⁻²H⁻¹)`.
pub fn closed_form_qu(
    model: &QuadraticModel,
    noise: &NoiseModel,
    config: &OptimizerConfig,
    restriction: Restriction<'_>,
) -> Result<Decomposition> {
    config.validate()?;
    if noise.covariance_mode != CovarianceMode::ScaledHessian {
        return Err(Error::Model("closed-form Q and U need the noise covariance sigma^2 H".into()));
    }
    let s2 = noise.sigma_sq;
    if !(s2 > 0.0) {
        return Err(Error::Model("closed-form U needs sigma^2 > 0".into()));
    }
    let (eta, beta, lambda) = (config.eta, config.beta, config.lambda);
    let g2 = 2.0 * config.gamma();
    let pos_scale = 2.0 / (eta * s2 * (1.0 + beta));
    let stiff = 2.0 / (eta * (1.0 + beta));
    match restriction {
        Restriction::Full => {
            let d = model.dim();
            let (vals, vecs) = sorted_symmetric_eigen(&model.h);
            let top = vals[0].abs().max(f64::MIN_POSITIVE);
            if vals[d - 1] <= 1e-12 * top {
                return Err(Error::Singular {
                    context: "H has a zero eigenvalue; restrict to the image of H".into(),
                    null_direction: vecs.column(d - 1).iter().copied().collect(),
                });
            }
            let spectral = |f: &dyn Fn(f64) -> f64| {
                let mut scaled = vecs.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= f(vals[j]);
                }
                symmetrize(&(scaled * vecs.transpose()))
            };
            let h_inv = spectral(&|r| 1.0 / r);
            let reg_inv_h = spectral(&|r| r / (r + lambda));
            let eye = DMatrix::<f64>::identity(d, d);
            let hreg = &model.h + &eye * lambda;

            let mut a = DMatrix::zeros(2 * d, 2 * d);
            a.view_mut((0, d), (d, d)).copy_from(&(-&eye));
            a.view_mut((d, 0), (d, d)).copy_from(&(&hreg * stiff));
            a.view_mut((d, d), (d, d)).copy_from(&(&eye * g2));
            let mut dm = DMatrix::zeros(2 * d, 2 * d);
            dm.view_mut((d, d), (d, d)).copy_from(&(&model.h * (g2 * s2)));
            let mut q = DMatrix::zeros(2 * d, 2 * d);
            q.view_mut((0, d), (d, d)).copy_from(&(&model.h * -s2));
            q.view_mut((d, 0), (d, d)).copy_from(&(&model.h * s2));
            let mut u = DMatrix::zeros(2 * d, 2 * d);
            u.view_mut((0, 0), (d, d)).copy_from(&((&eye + &h_inv * lambda) * pos_scale));
            u.view_mut((d, d), (d, d)).copy_from(&(&h_inv / s2));
            let mut b = DMatrix::zeros(2 * d, 2 * d);
            b.view_mut((0, 0), (d, d)).copy_from(&(reg_inv_h / pos_scale));
            b.view_mut((d, d), (d, d)).copy_from(&(&model.h * s2));
            let mut center = DVector::zeros(2 * d);
            center.rows_mut(0, d).copy_from(&model.mu);
            Ok(Decomposition::from_parts(a, dm, q, u, b, center))
        }
        Restriction::Basis(basis) => {
            let k = basis.k();
            if let Some(l) = basis.values.iter().position(|&r| !(r > 0.0)) {
                return Err(Error::Singular {
                    context: format!("eigenvalue {l} of the basis is not positive"),
                    null_direction: basis.vector(l).iter().copied().collect(),
                });
            }
            let mut a = DMatrix::zeros(2 * k, 2 * k);
            let mut dm = DMatrix::zeros(2 * k, 2 * k);
            let mut q = DMatrix::zeros(2 * k, 2 * k);
            let mut u = DMatrix::zeros(2 * k, 2 * k);
            let mut b = DMatrix::zeros(2 * k, 2 * k);
            for l in 0..k {
                let rho = basis.values[l];
                a[(l, k + l)] = -1.0;
                a[(k + l, l)] = stiff * (rho + lambda);
                a[(k + l, k + l)] = g2;
                dm[(k + l, k + l)] = g2 * s2 * rho;
                q[(l, k + l)] = -s2 * rho;
                q[(k + l, l)] = s2 * rho;
                u[(l, l)] = pos_scale * (rho + lambda) / rho;
                u[(k + l, k + l)] = 1.0 / (s2 * rho);
                b[(l, l)] = rho / (pos_scale * (rho + lambda));
                b[(k + l, k + l)] = s2 * rho;
            }
            Ok(Decomposition::from_parts(a, dm, q, u, b, DVector::zeros(2 * k)))
        }
    }
}

/// `Ψ(x) = (x − c)ᵀ(U/2)(x − c)` and its position and velocity blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedLoss {
    pub center: DVector<f64>,
    pub curvature: DMatrix<f64>,
    pub position_part: DMatrix<f64>,
    pub velocity_part: DMatrix<f64>,
}

impl ModifiedLoss {
    pub fn value(&self, theta: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let m = theta.len();
        let mut e = DVector::zeros(2 * m);
        e.rows_mut(0, m).copy_from(theta);
        e.rows_mut(m, m).copy_from(v);
        e -= &self.center;
        e.dot(&(&self.curvature * &e))
    }

    /// `Ψ_θ`, the position part.
    pub fn position(&self, theta: &DVector<f64>) -> f64 {
        let m = theta.len();
        let e = theta - self.center.rows(0, m);
        e.dot(&(&self.position_part * &e))
    }

    /// `Ψ_v`, the velocity part.
    pub fn velocity(&self, v: &DVector<f64>) -> f64 {
        let m = v.len();
        let e = v - self.center.rows(m, m);
        e.dot(&(&self.velocity_part * &e))
    }
}

pub fn modified_loss(dec: &Decomposition, theta: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let m = dec.dim() / 2;
    if theta.len() != m || v.len() != m {
        return Err(Error::Dimension(format!("phase state does not match dimension {m}")));
    }
    Ok(dec.modified_loss().value(theta, v))
}

/// `j = −QU(x − c)` for a decomposition in parameter coordinates.
pub fn probability_current(
    dec: &Decomposition,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = dec.dim() / 2;
    if theta.len() != m || v.len() != m {
        return Err(Error::Dimension(format!("phase state does not match dimension {m}")));
    }
    let mut x = DVector::zeros(2 * m);
    x.rows_mut(0, m).copy_from(theta);
    x.rows_mut(m, m).copy_from(v);
    Ok(dec.current(&x))
}

/// `j = [v; −(2/(η(1+β)))(H+λI)(θ−μ)]` evaluated directly.
pub fn sgd_current(
    model: &QuadraticModel,
    config: &OptimizerConfig,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let d = model.dim();
    let e = theta - &model.mu;
    let force = (&model.h * &e + &e * config.lambda) * (-2.0 / (config.eta * (1.0 + config.beta)));
    let mut j = DVector::zeros(2 * d);
    j.rows_mut(0, d).copy_from(v);
    j.rows_mut(d, d).copy_from(&force);
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    DetailedBalance,
    BrokenDetailedBalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lyapunov_residual: f64,
    pub reconstruction_residual: f64,
    pub skew_residual: f64,
    /// Worst `|jᵀ∇Ψ| / (‖j‖‖∇Ψ‖)` over the probe points.
    pub orthogonality: f64,
    /// `|tr(QU)| / (‖Q‖_F‖U‖_F)`.
    pub divergence: f64,
    pub balance: Balance,
}

/// Checks that the current is divergence-free and orthogonal to `∇Ψ` on
/// `probes` random points spread at the stationary scale.
pub fn stationarity_certificate(dec: &Decomposition, probes: usize, seed: u64) -> Certificate {
    let n = dec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale: Vec<f64> = (0..n).map(|i| dec.b[(i, i)].abs().sqrt().max(1e-300)).collect();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = DVector::from_fn(n, |i, _| {
            { let z: f64 = StandardNormal.sample(&mut rng); dec.center[i] + 3.0 * scale[i] * z }
        });
        let grad = dec.potential_gradient(&x);
        let j = -(&dec.q * &grad);
        let den = j.norm() * grad.norm();
        if den > 0.0 {
            worst = worst.max(j.dot(&grad).abs() / den);
        }
    }
    let qn = dec.q.norm();
    let tr = (&dec.q * &dec.u).trace();
    let balance = if qn <= 1e-10 * dec.diffusion.norm().max(dec.drift.norm()) {
        Balance::DetailedBalance
    } else {
        Balance::BrokenDetailedBalance
    };
    Certificate {
        lyapunov_residual: dec.residuals.lyapunov,
        reconstruction_residual: dec.residuals.reconstruction,
        skew_residual: dec.residuals.skew,
        orthogonality: worst,
        divergence: rel(tr.abs(), qn * dec.u.norm()),
        balance,
    }
}

//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing here calls into the closed forms under test: matrix exponentials
//! come from a Taylor series with scaling and squaring, covariances from
//! adaptive quadrature of the Itô integral, trajectories from an adaptive
//! Runge–Kutta integrator, and Lyapunov solutions from a dense Kronecker solve.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sgdlab::problem::QuadraticModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Haar-ish random orthogonal matrix (QR of a Gaussian matrix).
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian_matrix(d, d, rng).qr().q()
}

/// `Q diag(values) Qᵀ` with a random rotation.
pub fn rotated(values: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_orthogonal(values.len(), rng);
    let h = &q * DMatrix::from_diagonal(&DVector::from_row_slice(values)) * q.transpose();
    (&h + h.transpose()) * 0.5
}

/// A quadratic with a random rotated spectrum drawn from `[lo, hi]`.
pub fn random_model(d: usize, lo: f64, hi: f64, lambda: f64, seed: u64) -> QuadraticModel {
    let mut r = rng(seed);
    let values: Vec<f64> = (0..d)
        .map(|_| {
            let u: f64 = rand::Rng::gen(&mut r);
            lo * (hi / lo).powf(u)
        })
        .collect();
    let h = rotated(&values, &mut r);
    let b = gaussian_vector(d, &mut r);
    QuadraticModel::from_parts(h, b, lambda).unwrap()
}

/// `e^M` by scaling and squaring a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &a / k as f64;
        sum += &term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Adaptive Simpson quadrature of a matrix-valued integrand on `[a, b]`.
pub fn integrate<F: Fn(f64) -> DMatrix<f64>>(f: &F, a: f64, b: f64, tol: f64) -> DMatrix<f64> {
    fn simpson(fa: &DMatrix<f64>, fm: &DMatrix<f64>, fb: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        (fa + fm * 4.0 + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> DMatrix<f64>>(
        f: &F,
        a: f64,
        b: f64,
        fa: DMatrix<f64>,
        fm: DMatrix<f64>,
        fb: DMatrix<f64>,
        whole: DMatrix<f64>,
        tol: f64,
        depth: u32,
    ) -> DMatrix<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(&fa, &flm, &fm, m - a);
        let right = simpson(&fm, &frm, &fb, b - m);
        let err = (&left + &right - &whole).abs().max();
        if depth == 0 || err <= 15.0 * tol {
            return &left + &right + (&left + &right - &whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm.clone(), left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(&fa, &fm, &fb, b - a);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫₀ᵗ e^{−As} G e^{−Aᵀs} ds`, the covariance at `t` of `dx = −Ax dt + G^{1/2} dW` from a point.
pub fn ito_covariance(a: &DMatrix<f64>, g: &DMatrix<f64>, t: f64, tol: f64) -> DMatrix<f64> {
    if t == 0.0 {
        return DMatrix::zeros(a.nrows(), a.nrows());
    }
    let f = |s: f64| {
        let e = expm(&(a * -s));
        &e * g * e.transpose()
    };
    integrate(&f, 0.0, t, tol)
}

/// Dormand–Prince 5(4) with adaptive steps, integrating `y' = f(t, y)` to `t1`.
pub fn rk45<F: Fn(f64, &DVector<f64>) -> DVector<f64>>(
    f: F,
    y0: &DVector<f64>,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> DVector<f64> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut t = 0.0;
    let mut y = y0.clone();
    let mut h = (t1 / 100.0).max(1e-12);
    while t < t1 {
        h = h.min(t1 - t);
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for i in 0..7 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate() {
                yi.axpy(h * A[i][j], kj, 1.0);
            }
            k.push(f(t + C[i] * h, &yi));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for i in 0..7 {
            y5.axpy(h * B5[i], &k[i], 1.0);
            y4.axpy(h * B4[i], &k[i], 1.0);
        }
        let err = (0..y.len())
            .map(|i| ((y5[i] - y4[i]) / (atol + rtol * y5[i].abs().max(y[i].abs()))).powi(2))
            .sum::<f64>()
            .sqrt()
            / (y.len() as f64).sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// Damped oscillator `ä + 2γȧ + ω²a = 0` integrated to `t`.
pub fn oscillator(gamma: f64, omega: f64, a0: f64, b0: f64, t: f64) -> (f64, f64) {
    let y = rk45(
        |_, y| DVector::from_vec(vec![y[1], -omega * omega * y[0] - 2.0 * gamma * y[1]]),
        &DVector::from_vec(vec![a0, b0]),
        t,
        1e-12,
        1e-14,
    );
    (y[0], y[1])
}

/// Dense vectorized solve of `AX + XAᵀ = C`.
pub fn kron_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let x = k.lu().solve(&DVector::from_column_slice(c.as_slice())).expect("nonsingular");
    DMatrix::from_column_slice(n, n, x.as_slice())
}

/// Phase-space drift `[[0, −I], [2(H+λI)/(η(1+β)), 2(1−β)/(η(1+β))·I]]` built from scratch.
pub fn sgd_drift(h: &DMatrix<f64>, eta: f64, beta: f64, lambda: f64) -> DMatrix<f64> {
    let d = h.nrows();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    let s = 2.0 / (eta * (1.0 + beta));
    for i in 0..d {
        a[(i, d + i)] = -1.0;
        a[(d + i, d + i)] = 2.0 * (1.0 - beta) / (eta * (1.0 + beta));
        a[(d + i, i)] += s * lambda;
        for j in 0..d {
            a[(d + i, j)] += s * h[(i, j)];
        }
    }
    a
}

/// Phase-space diffusion `[[0, 0], [0, 2γΣ]]` built from scratch.
pub fn sgd_diffusion(sigma: &DMatrix<f64>, eta: f64, beta: f64) -> DMatrix<f64> {
    let d = sigma.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    let g2 = 2.0 * (1.0 - beta) / (eta * (1.0 + beta));
    m.view_mut((d, d), (d, d)).copy_from(&(sigma * g2));
    m
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

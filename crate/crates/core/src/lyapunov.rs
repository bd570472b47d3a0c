//! Continuous Lyapunov equation `AX + XAᵀ = C` by Bartels–Stewart on a real Schur form.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};

/// Splits a quasi-upper-triangular matrix into its 1×1 and 2×2 diagonal blocks.
fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)].abs();
            let diag = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub > 1e-14 * diag.max(f64::MIN_POSITIVE) {
                blocks.push((i, 2));
                i += 2;
                continue;
            }
        }
        blocks.push((i, 1));
        i += 1;
    }
    blocks
}

/// Solves `T_ii Y + Y T_jjᵀ = R` for a block of size at most 2×2.
fn solve_small(tii: &DMatrix<f64>, tjj: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, q) = (tii.nrows(), tjj.nrows());
    let mut k = DMatrix::zeros(p * q, p * q);
    // Column-major vec: vec(T Y) = (I ⊗ T) vec Y, vec(Y Sᵀ) = (S ⊗ I) vec Y.
    for c in 0..q {
        for r in 0..p {
            let row = c * p + r;
            for r2 in 0..p {
                k[(row, c * p + r2)] += tii[(r, r2)];
            }
            for c2 in 0..q {
                k[(row, c2 * p + r)] += tjj[(c, c2)];
            }
        }
    }
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = k.lu().solve(&b).ok_or_else(|| {
        Error::Decomposition(
            "drift has eigenvalues with lambda_i + lambda_j = 0; the Lyapunov equation is singular"
                .into(),
        )
    })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("Lyapunov block solve produced non-finite values".into()));
    }
    Ok(DMatrix::from_column_slice(p, q, x.as_slice()))
}

/// Solves `AX + XAᵀ = C`.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || c.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov equation needs square matrices of equal size, got {:?} and {:?}",
            a.shape(),
            c.shape()
        )));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Decomposition("real Schur form did not converge".into()))?;
    let (z, t) = schur.unpack();
    let f = z.tr_mul(c) * &z;
    let blocks = diagonal_blocks(&t);
    let mut y = DMatrix::zeros(n, n);
    for bi in (0..blocks.len()).rev() {
        let (i0, p) = blocks[bi];
        for bj in (0..blocks.len()).rev() {
            let (j0, q) = blocks[bj];
            let mut rhs = f.view((i0, j0), (p, q)).into_owned();
            // Contributions from already-solved blocks below and to the right.
            let below = i0 + p;
            if below < n {
                rhs -= t.view((i0, below), (p, n - below)) * y.view((below, j0), (n - below, q));
            }
            let right = j0 + q;
            if right < n {
                rhs -= y.view((i0, right), (p, n - right))
                    * t.view((j0, right), (q, n - right)).transpose();
            }
            let tii = t.view((i0, i0), (p, p)).into_owned();
            let tjj = t.view((j0, j0), (q, q)).into_owned();
            let blk = solve_small(&tii, &tjj, &rhs)?;
            y.view_mut((i0, j0), (p, q)).copy_from(&blk);
        }
    }
    Ok(&z * y * z.transpose())
}

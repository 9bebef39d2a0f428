//! Dense linear algebra oracles for tests. Independent of the library's own
//! SVD path so they can check it; depends only on nalgebra.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;

/// One-sided (Hestenes) Jacobi SVD. Returns `(W, V)` with `A V = W`, `V`
/// orthogonal and the columns of `W` mutually orthogonal; the singular values
/// are the column norms of `W`. Deliberately unrelated to nalgebra's
/// bidiagonalization so it can act as an oracle.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (xp, xq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * xp - s * xq;
                        m[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

pub fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (w, _) = jacobi_svd(a);
    let mut s: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(a.nrows().min(a.ncols()));
    s
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    jacobi_singular_values(a).iter().sum()
}

/// Nuclear norm of a complex matrix through its real embedding
/// `[[X, -Y], [Y, X]]`, whose singular values are those of `X + iY` twice.
pub fn complex_nuclear_norm(a: &DMatrix<Complex64>) -> f64 {
    let (r, c) = a.shape();
    let e = DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    nuclear_norm(&e) / 2.0
}

/// Singular value soft thresholding by `eta`.
pub fn svt(a: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    let (w, v) = jacobi_svd(a);
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        let s = w.column(j).norm();
        if s > eta {
            out += w.column(j) * v.column(j).transpose() * ((s - eta) / s);
        }
    }
    out
}

#[test]
fn jacobi_oracle_sanity() {
    let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
    assert_eq!(jacobi_singular_values(&a), vec![3.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let s = jacobi_singular_values(&b);
    // sum of squares equals the Frobenius norm squared
    assert!((s.iter().map(|x| x * x).sum::<f64>() - 91.0).abs() < 1e-10);
    assert!((s[0] * s[1] - (b.clone() * b.transpose()).determinant().sqrt()).abs() < 1e-10);
}

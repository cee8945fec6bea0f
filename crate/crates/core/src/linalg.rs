//! Small dense linear-algebra helpers for symmetric systems up to a few
//! dozen dimensions. Row-major `Vec<S>` storage throughout.

use crate::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` if a pivot is not positive.
pub fn cholesky<S: Scalar>(n: usize, a: &[S]) -> Option<Vec<S>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum = sum - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= S::zero() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `A x = b` given the Cholesky factor `l` of `A`.
pub fn cholesky_solve<S: Scalar>(n: usize, l: &[S], b: &[S]) -> Vec<S> {
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum = sum - l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Solves a symmetric system, adding progressively larger ridge terms until
/// the Cholesky factorization succeeds.
pub fn solve_spd_ridged<S: Scalar>(n: usize, a: &[S], b: &[S]) -> Vec<S> {
    if let Some(l) = cholesky(n, a) {
        return cholesky_solve(n, &l, b);
    }
    let trace: S = (0..n).map(|i| a[i * n + i]).sum();
    let scale = (trace / S::from_f64_lossy(n as f64)).abs().max(S::one());
    let mut ridge = S::from_f64_lossy(1e-10) * scale;
    loop {
        let mut aa = a.to_vec();
        for i in 0..n {
            aa[i * n + i] = aa[i * n + i] + ridge;
        }
        if let Some(l) = cholesky(n, &aa) {
            return cholesky_solve(n, &l, b);
        }
        ridge = ridge * S::from_f64_lossy(10.0);
    }
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<S: Scalar>(n: usize, a: &[S]) -> Vec<S> {
    let mut m = a.to_vec();
    let tol = S::from_f64_lossy(1e-12);
    for _sweep in 0..64 {
        let mut off = S::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        let norm: S = (0..n * n).map(|i| m[i] * m[i]).sum();
        if off <= tol * norm.max(S::one()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (S::from_f64_lossy(2.0) * apq);
                let t = {
                    let s = if theta >= S::zero() {
                        S::one()
                    } else {
                        -S::one()
                    };
                    s / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

pub fn min_eigenvalue<S: Scalar>(n: usize, a: &[S]) -> S {
    symmetric_eigenvalues(n, a)
        .into_iter()
        .fold(S::infinity(), |acc, v| acc.min(v))
}

/// Orthonormalizes the rows of a square matrix in place via modified
/// Gram-Schmidt. Used for orthogonal recurrent-weight initialization.
pub fn orthonormalize_rows<S: Scalar>(n: usize, m: &mut [S]) {
    for i in 0..n {
        for j in 0..i {
            let mut dot = S::zero();
            for k in 0..n {
                dot = dot + m[i * n + k] * m[j * n + k];
            }
            for k in 0..n {
                m[i * n + k] = m[i * n + k] - dot * m[j * n + k];
            }
        }
        let mut norm = S::zero();
        for k in 0..n {
            norm = norm + m[i * n + k] * m[i * n + k];
        }
        let norm = norm.sqrt();
        if norm > S::from_f64_lossy(1e-12) {
            for k in 0..n {
                m[i * n + k] = m[i * n + k] / norm;
            }
        } else {
            // degenerate row: replace with a unit basis vector
            for k in 0..n {
                m[i * n + k] = if k == i { S::one() } else { S::zero() };
            }
        }
    }
}

//! Minimal dense symmetric linear algebra for the noise-covariance
//! diagnostic: Cholesky factorization and Jacobi eigenvalues.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cholesky factor L (lower triangular, row-major n x n) of an SPD matrix.
pub fn cholesky<S: Scalar>(a: &[S], n: usize) -> Result<Vec<S>> {
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= S::zero() {
                    return Err(Error::Numeric(
                        "cholesky: matrix not positive definite".into(),
                    ));
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solve L x = b for lower-triangular L.
fn solve_lower<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Form C = L^{-1} A L^{-T} for symmetric A; C is symmetric.
pub fn congruence_by_inverse_cholesky<S: Scalar>(l: &[S], a: &[S], n: usize) -> Vec<S> {
    // solve column-wise: first X with L X = A, then C with L C^T = X^T
    let mut x = a.to_vec();
    for j in 0..n {
        let mut col: Vec<S> = (0..n).map(|i| x[i * n + j]).collect();
        solve_lower(l, n, &mut col);
        for i in 0..n {
            x[i * n + j] = col[i];
        }
    }
    let mut c = vec![S::zero(); n * n];
    for i in 0..n {
        let mut row: Vec<S> = (0..n).map(|j| x[i * n + j]).collect();
        solve_lower(l, n, &mut row);
        c[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    // symmetrize against roundoff
    for i in 0..n {
        for j in 0..i {
            let avg = (c[i * n + j] + c[j * n + i]) * S::cst(0.5);
            c[i * n + j] = avg;
            c[j * n + i] = avg;
        }
    }
    c
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues<S: Scalar>(a: &[S], n: usize) -> Vec<S> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= S::epsilon() * S::of_usize(n) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= S::epsilon() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (S::cst(2.0) * apq);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_and_congruence() {
        // A = [[4,2],[2,3]], L = [[2,0],[1,sqrt(2)]]
        let a = [4.0f64, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-14);
        assert!((l[2] - 1.0).abs() < 1e-14);
        assert!((l[3] - 2.0f64.sqrt()).abs() < 1e-14);
        // L^{-1} A L^{-T} must be the identity
        let c = congruence_by_inverse_cholesky(&l, &a, 2);
        assert!((c[0] - 1.0).abs() < 1e-13);
        assert!(c[1].abs() < 1e-13);
        assert!((c[3] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn jacobi_small_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = [2.0f64, 1.0, 1.0, 2.0];
        let mut eig = jacobi_eigenvalues(&a, 2);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonal_passthrough() {
        let a = [5.0f64, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0];
        let mut eig = jacobi_eigenvalues(&a, 3);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(eig, vec![-1.0, 2.0, 5.0]);
    }
}

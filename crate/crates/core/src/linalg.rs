//! Cholesky routines for the small dense SPD systems in the prior term.

use crate::math;
use crate::{Error, Matrix, Result};

/// Lower-triangular `L` with `L Lᵀ = a`. Reads only the lower triangle.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension {
            op: "cholesky",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let djj = math::sqrt(d);
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` for every column of `b`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if b.rows() != n {
        return Err(Error::Dimension {
            op: "cholesky_solve",
            lhs: l.shape(),
            rhs: b.shape(),
        });
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

pub fn cholesky_inverse(l: &Matrix) -> Result<Matrix> {
    cholesky_solve(l, &Matrix::identity(l.rows()))
}

/// `log det(L Lᵀ)`.
pub fn chol_log_det(l: &Matrix) -> f64 {
    (0..l.rows()).map(|i| 2.0 * math::ln(l[(i, i)])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix {
        Matrix::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, -0.2], &[0.5, -0.2, 2.0]])
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd();
        let l = cholesky(&a).unwrap();
        assert!(l.matmul_t(&l).unwrap().max_abs_diff(&a) < 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn inverse_and_solve() {
        let a = spd();
        let l = cholesky(&a).unwrap();
        let inv = cholesky_inverse(&l).unwrap();
        assert!(a.matmul(&inv).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-14);
        let b = Matrix::column(alloc::vec![1.0, -2.0, 0.5]);
        let x = cholesky_solve(&l, &b).unwrap();
        assert!(a.matmul(&x).unwrap().max_abs_diff(&b) < 1e-14);
        // det by cofactor expansion
        let det = 4.0 * (3.0 * 2.0 - 0.04) - 1.0 * (2.0 + 0.1) + 0.5 * (-0.2 - 1.5);
        assert!((chol_log_det(&l) - math::ln(det)).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(cholesky(&a), Err(Error::NotPositiveDefinite { pivot: 1 }));
    }
}

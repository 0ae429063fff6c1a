//! Small dense symmetric linear algebra (d is expected to be 2–20).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute asymmetry tolerated by [`sym_eig`], scaled by `max(1, max|m_ij|)`.
pub const ASYMMETRY_TOL: f64 = 1e-8;
/// Smallest eigenvalue accepted as positive definite.
pub const MIN_SPD_EIGENVALUE: f64 = 1e-10;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// `V diag(f(λ)) V'`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        &scaled * self.vectors.transpose()
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::domain(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let asym = asymmetry(m);
    if asym > tol * max_abs(m).max(1.0) {
        return Err(Error::domain(format!("matrix asymmetric by {asym:.3e}")));
    }
    Ok(())
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotation sweeps.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEigen> {
    check_symmetric(m, ASYMMETRY_TOL)?;
    let n = m.nrows();
    let mut a = symmetrized(m);
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.iter().map(|x| x * x).sum::<f64>();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Eigen-decomposition of an SPD matrix, rejecting eigenvalues below
/// [`MIN_SPD_EIGENVALUE`].
pub fn spd_eig(m: &DMatrix<f64>) -> Result<SymEigen> {
    let eig = sym_eig(m)?;
    let min = eig.min_value();
    if min < MIN_SPD_EIGENVALUE {
        return Err(Error::domain(format!(
            "matrix is not positive definite: min eigenvalue {min:.3e}"
        )));
    }
    Ok(eig)
}

/// Symmetric positive definite square root.
pub fn matrix_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eig(m)?;
    Ok(symmetrized(&eig.reconstruct_with(f64::sqrt)))
}

/// Symmetric inverse square root of an SPD matrix.
pub fn matrix_inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eig(m)?;
    Ok(symmetrized(&eig.reconstruct_with(|l| 1.0 / l.sqrt())))
}

pub fn matrix_inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eig(m)?;
    Ok(symmetrized(&eig.reconstruct_with(|l| 1.0 / l)))
}

/// Lower Cholesky factor, used for drawing correlated normals.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_eig(m)?;
    nalgebra::Cholesky::new(symmetrized(m))
        .map(|c| c.l())
        .ok_or_else(|| Error::domain("Cholesky factorization failed"))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x' m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

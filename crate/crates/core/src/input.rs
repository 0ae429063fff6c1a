use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};

/// Eigenvalues of `sigma_hat` must lie in this range.
pub const SIGMA_EIGEN_RANGE: (f64, f64) = (1e-10, 1e10);
const SIGMA_SYMMETRY_TOL: f64 = 1e-12;

/// Everything the statistics consume: `θ̂`, `Σ̂`, the rate `r_n` and the
/// degeneracy point `θ⋆`.
///
/// `Σ̂` is scaled so that `r_n(θ̂ - θ) ≈ N(0, Σ̂)`. Square roots and the
/// inverse of `Σ̂` are computed once at construction.
#[derive(Debug, Clone)]
pub struct EstimateInput {
    theta_hat: DVector<f64>,
    sigma_hat: DMatrix<f64>,
    r_n: f64,
    theta_star: DVector<f64>,
    sigma_eigen: SymEigen,
    sigma_inv: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
    sigma_inv_sqrt: DMatrix<f64>,
}

impl EstimateInput {
    pub fn new(
        theta_hat: DVector<f64>,
        sigma_hat: DMatrix<f64>,
        r_n: f64,
        theta_star: DVector<f64>,
    ) -> Result<Self> {
        let d = theta_hat.len();
        if d == 0 {
            return Err(Error::domain("θ̂ is empty"));
        }
        if theta_star.len() != d || sigma_hat.nrows() != d || sigma_hat.ncols() != d {
            return Err(Error::domain(format!(
                "dimension mismatch: θ̂ has {d} entries, θ⋆ {}, Σ̂ is {}x{}",
                theta_star.len(),
                sigma_hat.nrows(),
                sigma_hat.ncols()
            )));
        }
        if theta_hat.iter().chain(theta_star.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("θ̂ and θ⋆ must be finite"));
        }
        if !(r_n > 0.0 && r_n.is_finite()) {
            return Err(Error::domain(format!("r_n must be positive, got {r_n}")));
        }
        linalg::check_symmetric(&sigma_hat, SIGMA_SYMMETRY_TOL)?;
        let sigma_hat = (&sigma_hat + sigma_hat.transpose()) * 0.5;
        let sigma_eigen = linalg::sym_eig(&sigma_hat)?;
        let (lo, hi) = SIGMA_EIGEN_RANGE;
        if sigma_eigen.min_value() < lo || sigma_eigen.max_value() > hi {
            return Err(Error::domain(format!(
                "Σ̂ eigenvalues [{:.3e}, {:.3e}] outside [{lo:e}, {hi:e}] (min eigenvalue {:.3e})",
                sigma_eigen.min_value(),
                sigma_eigen.max_value(),
                sigma_eigen.min_value()
            )));
        }
        let sigma_inv = sigma_eigen.reconstruct_with(|l| 1.0 / l);
        let sigma_sqrt = sigma_eigen.reconstruct_with(f64::sqrt);
        let sigma_inv_sqrt = sigma_eigen.reconstruct_with(|l| 1.0 / l.sqrt());
        Ok(Self {
            theta_hat,
            sigma_hat,
            r_n,
            theta_star,
            sigma_eigen,
            sigma_inv: (&sigma_inv + sigma_inv.transpose()) * 0.5,
            sigma_sqrt: (&sigma_sqrt + sigma_sqrt.transpose()) * 0.5,
            sigma_inv_sqrt: (&sigma_inv_sqrt + sigma_inv_sqrt.transpose()) * 0.5,
        })
    }

    /// Convenience constructor from standard errors and a correlation (d = 2).
    pub fn from_standard_errors_2d(
        theta_hat: [f64; 2],
        se: [f64; 2],
        correlation: f64,
        r_n: f64,
        theta_star: [f64; 2],
    ) -> Result<Self> {
        if !(correlation.abs() < 1.0) {
            return Err(Error::domain(format!("correlation {correlation} outside (-1, 1)")));
        }
        if se.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::domain("standard errors must be positive"));
        }
        let cov = correlation * se[0] * se[1];
        let sigma = DMatrix::from_row_slice(2, 2, &[se[0] * se[0], cov, cov, se[1] * se[1]]);
        Self::new(
            DVector::from_row_slice(&theta_hat),
            sigma,
            r_n,
            DVector::from_row_slice(&theta_star),
        )
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn sigma_hat(&self) -> &DMatrix<f64> {
        &self.sigma_hat
    }

    pub fn r_n(&self) -> f64 {
        self.r_n
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn sigma_eigen(&self) -> &SymEigen {
        &self.sigma_eigen
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    pub fn sigma_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_inv_sqrt
    }

    /// The estimated local parameter `r_n(θ̂ - θ⋆)`.
    pub fn local_parameter(&self) -> DVector<f64> {
        (&self.theta_hat - &self.theta_star) * self.r_n
    }

    /// `r_n² (θ̂ - θ)' Σ̂⁻¹ (θ̂ - θ)`.
    pub fn distance_sq(&self, theta: &DVector<f64>) -> f64 {
        let diff = &self.theta_hat - theta;
        self.r_n * self.r_n * linalg::quad_form(&self.sigma_inv, &diff)
    }

    /// Same input with a different point estimate.
    pub fn with_theta_hat(&self, theta_hat: DVector<f64>) -> Result<Self> {
        if theta_hat.len() != self.dim() {
            return Err(Error::domain("θ̂ dimension changed"));
        }
        let mut out = self.clone();
        out.theta_hat = theta_hat;
        Ok(out)
    }
}

//! The transformation `g` with analytic derivatives, and the degeneracy
//! diagnostics that decide which critical value is admissible.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::input::EstimateInput;
use crate::linalg;
use crate::rng::RngStream;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Default tolerance for [`hstar_contains`].
pub const HSTAR_TOL: f64 = 1e-9;
const STAR_GRADIENT_TOL: f64 = 1e-8;
const FD_REL_TOL: f64 = 1e-5;
const FD_AUDIT_POINTS: usize = 20;

#[derive(Clone)]
enum Kind {
    Product,
    Monomial(u32),
    QuadraticForm(DMatrix<f64>),
    Custom {
        eval: ScalarFn,
        grad: GradientFn,
        hess: HessianFn,
    },
}

/// `g(θ) = (θ - center)' a (θ - center) + offset`, exposed by transformations
/// whose level sets are quadrics so the minimum-distance solver can use its
/// exact path.
#[derive(Debug, Clone)]
pub struct QuadraticStructure {
    pub a: DMatrix<f64>,
    pub center: DVector<f64>,
    pub offset: f64,
}

/// A smooth scalar transformation with `∇g(θ⋆) = 0`.
///
/// Values are immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct GFunction {
    name: String,
    dim: usize,
    theta_star: DVector<f64>,
    kind: Kind,
}

impl fmt::Debug for GFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("theta_star", &self.theta_star.as_slice())
            .finish()
    }
}

impl GFunction {
    /// `g(θ) = θ₁θ₂`, the indirect effect in mediation analysis.
    pub fn product() -> Self {
        Self {
            name: "product".into(),
            dim: 2,
            theta_star: DVector::zeros(2),
            kind: Kind::Product,
        }
    }

    /// `g(θ) = θ^power` on a scalar parameter, e.g. an impulse response at
    /// horizon `power`.
    pub fn monomial(power: u32) -> Result<Self> {
        if power < 2 {
            return Err(Error::domain(format!("monomial power must be >= 2, got {power}")));
        }
        Ok(Self {
            name: format!("monomial{power}"),
            dim: 1,
            theta_star: DVector::zeros(1),
            kind: Kind::Monomial(power),
        })
    }

    /// `g(θ) = θ' a θ` (concentration parameter, population R², ...).
    pub fn quadratic_form(a: DMatrix<f64>) -> Result<Self> {
        linalg::check_symmetric(&a, 1e-12)?;
        let a = (&a + a.transpose()) * 0.5;
        if linalg::frobenius(&a) == 0.0 {
            return Err(Error::domain("quadratic form matrix is zero"));
        }
        let dim = a.nrows();
        Ok(Self {
            name: "quadratic_form".into(),
            dim,
            theta_star: DVector::zeros(dim),
            kind: Kind::QuadraticForm(a),
        })
    }

    /// A user-supplied transformation.
    ///
    /// The derivatives are audited against central finite differences at
    /// random points around `θ⋆`, and `∇g(θ⋆) = 0`, `∇²g(θ⋆) ≠ 0` are checked.
    pub fn custom(
        name: impl Into<String>,
        theta_star: DVector<f64>,
        eval: ScalarFn,
        grad: GradientFn,
        hess: HessianFn,
    ) -> Result<Self> {
        let dim = theta_star.len();
        if dim == 0 {
            return Err(Error::domain("θ⋆ is empty"));
        }
        let g = Self {
            name: name.into(),
            dim,
            theta_star,
            kind: Kind::Custom { eval, grad, hess },
        };
        g.audit()?;
        Ok(g)
    }

    fn audit(&self) -> Result<()> {
        let star = &self.theta_star;
        let grad_star = self.grad(star);
        if grad_star.len() != self.dim {
            return Err(Error::domain("gradient has the wrong dimension"));
        }
        if grad_star.norm() > STAR_GRADIENT_TOL {
            return Err(Error::domain(format!(
                "∇g(θ⋆) has norm {:.3e}, expected 0",
                grad_star.norm()
            )));
        }
        let h = self.hess(star);
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(Error::domain("Hessian has the wrong dimension"));
        }
        linalg::check_symmetric(&h, 1e-8)?;
        if linalg::frobenius(&h) <= 1e-12 {
            return Err(Error::domain("∇²g(θ⋆) vanishes"));
        }

        let mut rng = RngStream::new(0x6766_756e).rng();
        for _ in 0..FD_AUDIT_POINTS {
            let theta = DVector::from_fn(self.dim, |i, _| star[i] + rng.random_range(-1.0..1.0));
            let grad = self.grad(&theta);
            let fd = finite_difference_gradient(|x| self.eval(x), &theta);
            if (&grad - &fd).norm() > FD_REL_TOL * (1.0 + grad.norm()) {
                return Err(Error::domain(format!(
                    "gradient disagrees with finite differences at {:?}",
                    theta.as_slice()
                )));
            }
            let hess = self.hess(&theta);
            let fd_h = finite_difference_jacobian(|x| self.grad(x), &theta);
            if linalg::frobenius(&(&hess - &fd_h)) > FD_REL_TOL * (1.0 + linalg::frobenius(&hess)) {
                return Err(Error::domain(format!(
                    "Hessian disagrees with finite differences at {:?}",
                    theta.as_slice()
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Product => theta[0] * theta[1],
            Kind::Monomial(p) => theta[0].powi(*p as i32),
            Kind::QuadraticForm(a) => linalg::quad_form(a, theta),
            Kind::Custom { eval, .. } => eval(theta),
        }
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Product => DVector::from_row_slice(&[theta[1], theta[0]]),
            Kind::Monomial(p) => DVector::from_element(1, *p as f64 * theta[0].powi(*p as i32 - 1)),
            Kind::QuadraticForm(a) => (a * theta) * 2.0,
            Kind::Custom { grad, .. } => grad(theta),
        }
    }

    pub fn hess(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            Kind::Product => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            Kind::Monomial(p) => {
                let pf = *p as f64;
                DMatrix::from_element(1, 1, pf * (pf - 1.0) * theta[0].powi(*p as i32 - 2))
            }
            Kind::QuadraticForm(a) => a * 2.0,
            Kind::Custom { hess, .. } => hess(theta),
        }
    }

    /// `H = ∇²g(θ⋆)`.
    pub fn hessian_at_star(&self) -> DMatrix<f64> {
        self.hess(&self.theta_star)
    }

    pub fn value_at_star(&self) -> f64 {
        self.eval(&self.theta_star)
    }

    /// Exact quadric representation, when `g` has one.
    pub fn quadratic_structure(&self) -> Option<QuadraticStructure> {
        match &self.kind {
            Kind::Product => Some(QuadraticStructure {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
                center: DVector::zeros(2),
                offset: 0.0,
            }),
            Kind::Monomial(2) => Some(QuadraticStructure {
                a: DMatrix::from_element(1, 1, 1.0),
                center: DVector::zeros(1),
                offset: 0.0,
            }),
            Kind::QuadraticForm(a) => Some(QuadraticStructure {
                a: a.clone(),
                center: DVector::zeros(self.dim),
                offset: 0.0,
            }),
            _ => None,
        }
    }

    /// Monomial power, if this is a built-in monomial.
    pub fn monomial_power(&self) -> Option<u32> {
        match &self.kind {
            Kind::Monomial(p) => Some(*p),
            _ => None,
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self.kind, Kind::Product)
    }
}

/// Central finite-difference gradient.
pub fn finite_difference_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Central finite-difference Jacobian of a vector field (columns are partials).
pub fn finite_difference_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = 1e-5 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        out.set_column(j, &((up - down) / (2.0 * h)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Negative,
    Indefinite,
    Singular,
}

/// Eigen-structure of the sign-adjusted standardized Hessian.
#[derive(Debug, Clone)]
pub struct DegeneracyDiagnostics {
    /// `H = ∇²g(θ⋆)`.
    pub h: DMatrix<f64>,
    /// Eigenvalues of `sign(τ - g(θ⋆)) Σ^{1/2} H Σ^{1/2}`, descending.
    pub lambda: DVector<f64>,
    /// `(λ₁ + λ₂)/|λ₁ - λ₂|`; only defined for d = 2. `+∞` when the two
    /// eigenvalues coincide (see `equal_eigenvalues`).
    pub rho_p: Option<f64>,
    pub equal_eigenvalues: bool,
    /// Definiteness of `H` itself (not sign-adjusted).
    pub definiteness: Definiteness,
    /// The sign applied, with `sign(0) = +1`.
    pub sign: f64,
}

/// `sign(τ - g(θ⋆))` with `sign(0) := +1`.
pub fn null_sign(g: &GFunction, tau: f64) -> f64 {
    if tau - g.value_at_star() < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn diagnostics(g: &GFunction, input: &EstimateInput, tau: f64) -> Result<DegeneracyDiagnostics> {
    if input.dim() != g.dim() {
        return Err(Error::domain(format!(
            "g has dimension {}, estimate has {}",
            g.dim(),
            input.dim()
        )));
    }
    let h = g.hessian_at_star();
    let sign = null_sign(g, tau);
    let s_half = input.sigma_sqrt();
    let m = (s_half * &h * s_half) * sign;
    let m = (&m + m.transpose()) * 0.5;
    let lambda = linalg::sym_eig(&m)?.values;

    let h_eig = linalg::sym_eig(&h)?.values;
    let scale = h_eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let definiteness = if h_eig.iter().any(|v| v.abs() <= tol) {
        Definiteness::Singular
    } else if h_eig.iter().all(|v| *v > 0.0) {
        Definiteness::Positive
    } else if h_eig.iter().all(|v| *v < 0.0) {
        Definiteness::Negative
    } else {
        Definiteness::Indefinite
    };

    let (rho_p, equal_eigenvalues) = if lambda.len() == 2 {
        let gap = (lambda[0] - lambda[1]).abs();
        let mag = lambda[0].abs().max(lambda[1].abs());
        if gap <= 1e-12 * mag {
            (Some(f64::INFINITY), true)
        } else {
            (Some((lambda[0] + lambda[1]) / gap), false)
        }
    } else {
        (None, false)
    };

    Ok(DegeneracyDiagnostics {
        h,
        lambda,
        rho_p,
        equal_eigenvalues,
        definiteness,
        sign,
    })
}

/// Whether `h` lies (numerically) in the cone `{h : h' ∇²g(θ⋆) h = 0}`.
pub fn hstar_contains(g: &GFunction, h: &DVector<f64>, tol: f64) -> bool {
    let hess = g.hessian_at_star();
    let q = linalg::quad_form(&hess, h);
    q.abs() <= tol * (1.0 + h.norm_squared()) * linalg::frobenius(&hess)
}

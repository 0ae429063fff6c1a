//! Geometry of the normalized indefinite null
//!
//! ```text
//!     (1+ρ)θ₂² - (1-ρ)θ₁² = τ,    θ̂ - θ ~ N(0, I₂)
//! ```
//!
//! `S₀(τ)` is the upper branch `(x₁, X₂(x₁))` together with its mirror image.
//! The MD acceptance region `S(τ, c)` holds every point within distance `c`
//! of `S₀(τ)`. Distances are exact projections onto the quadric. The coverage
//! oracle estimates `P(θ̂ ∈ S(τ, c))` by Monte Carlo and by a polar quadrature.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dist;
use crate::error::{Error, Result};
use crate::quadric::DiagonalQuadric;
use crate::rng::RngStream;
use crate::stats;

const MC_BLOCK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullDistance {
    pub distance: f64,
    pub nearest: [f64; 2],
    pub branch: Branch,
    /// The mirror point on the other branch is equally close.
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub estimate: f64,
    pub mc_se: f64,
    pub n_draws: usize,
}

/// Radial Gauss–Legendre rule plus the angular scan used by `arc_fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarQuadrature {
    pub nodes: usize,
    pub r_max: f64,
    pub n_angle: usize,
    pub angle_tol: f64,
}

impl Default for PolarQuadrature {
    fn default() -> Self {
        Self {
            nodes: 200,
            r_max: 8.0,
            n_angle: 720,
            angle_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperbolaGeometry {
    pub rho: f64,
    pub tau: f64,
    pub c: f64,
    pub x1_star: f64,
    /// Kink of the upper boundary, present when `τ ≤ c²(1-ρ)²/(1+ρ)`.
    pub kink: Option<[f64; 2]>,
    quadric: DiagonalQuadric,
}

impl HyperbolaGeometry {
    pub fn new(rho: f64, tau: f64, c: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::domain(format!("rho = {rho} must lie in (-1, 1)")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("tau = {tau} must be finite and nonnegative")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!("c = {c} must be positive")));
        }
        let (x1_star, kink) = if tau <= kink_threshold(rho, c) {
            let x = (c * c * (1.0 - rho).powi(2) - (1.0 + rho) * tau).max(0.0).sqrt()
                / (2.0f64.sqrt() * (1.0 - rho).sqrt());
            let k = 2.0f64.sqrt() * (c * c * (1.0 - rho) + tau).sqrt() / (1.0 - rho * rho).sqrt();
            (x, Some([0.0, k]))
        } else {
            (0.0, None)
        };
        Ok(Self {
            rho,
            tau,
            c,
            x1_star,
            kink,
            quadric: DiagonalQuadric::new(vec![1.0 + rho, -(1.0 - rho)]),
        })
    }

    /// Geometry with `c = √Q(χ²₁, 1-α)`.
    pub fn with_alpha(rho: f64, tau: f64, alpha: f64) -> Result<Self> {
        Self::new(rho, tau, dist::chi2_quantile(1, 1.0 - alpha)?.sqrt())
    }

    pub fn g(&self, p: [f64; 2]) -> f64 {
        (1.0 + self.rho) * p[1] * p[1] - (1.0 - self.rho) * p[0] * p[0]
    }

    pub fn x2_branch(&self, x1: f64) -> f64 {
        ((self.tau + (1.0 - self.rho) * x1 * x1) / (1.0 + self.rho)).sqrt()
    }

    /// Maximum curvature `(1-ρ)/√(τ(1+ρ))` of the upper branch.
    pub fn max_curvature(&self) -> f64 {
        if self.tau == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - self.rho) / (self.tau * (1.0 + self.rho)).sqrt()
        }
    }

    pub fn curvature_condition(&self) -> bool {
        self.max_curvature() <= 1.0 / self.c
    }

    pub fn branch_condition(&self) -> bool {
        self.rho >= 0.0
    }

    /// Either sufficient condition for `P(θ̂ ∈ S(τ, c)) ≥ 1-α` holds.
    pub fn in_proven_region(&self) -> bool {
        self.curvature_condition() || self.branch_condition()
    }

    fn normalizer(&self, x1: f64, x2: f64) -> f64 {
        ((1.0 + self.rho).powi(2) * x2 * x2 + (1.0 - self.rho).powi(2) * x1 * x1).sqrt()
    }

    fn offset(&self, x1: f64, sign: f64) -> Result<[f64; 2]> {
        let x2 = self.x2_branch(x1);
        let n = self.normalizer(x1, x2);
        if n == 0.0 {
            return Err(Error::domain("normal undefined at the vertex of the degenerate null"));
        }
        Ok([
            x1 - sign * self.c * (1.0 - self.rho) * x1 / n,
            x2 + sign * self.c * (1.0 + self.rho) * x2 / n,
        ])
    }

    /// Point of `C_u(c)`: the upper branch pushed out by `c` along its normal.
    pub fn boundary_upper(&self, x1: f64) -> Result<[f64; 2]> {
        if x1.abs() < self.x1_star * (1.0 - 1e-12) {
            return Err(Error::domain(format!(
                "|x1| = {} lies inside (-x1*, x1*) with x1* = {}",
                x1.abs(),
                self.x1_star
            )));
        }
        self.offset(x1, 1.0)
    }

    /// Point of `C_ℓ(c)`: the upper branch pushed in by `c` along its normal.
    pub fn boundary_lower(&self, x1: f64) -> Result<[f64; 2]> {
        self.offset(x1, -1.0)
    }

    /// Distance from `(θ₁, X₂(θ₁))` to the kink.
    pub fn r_bar(&self, theta1: f64) -> Option<f64> {
        self.kink.map(|k| (theta1 - k[0]).hypot(self.x2_branch(theta1) - k[1]))
    }

    /// Nearest point of `S₀(τ)`. The lower half plane mirrors the upper one,
    /// so the nearest branch is the one on the side of `point`.
    pub fn dist_to_null(&self, point: [f64; 2]) -> NullDistance {
        let vhat = [point[1].abs(), point[0]];
        let mut v = [0.0; 2];
        let sol = self
            .quadric
            .solve(&vhat, self.tau, &mut v)
            .expect("an indefinite quadric meets every nonnegative level");
        let branch = if point[1] < 0.0 { Branch::Minus } else { Branch::Plus };
        let sign = if branch == Branch::Minus { -1.0 } else { 1.0 };
        NullDistance {
            distance: sol.stat.max(0.0).sqrt(),
            nearest: [v[1], sign * v[0].abs()],
            branch,
            tie: sol.mirror_gap[0] <= 1e-10 * (1.0 + sol.stat),
        }
    }

    pub fn contains(&self, point: [f64; 2]) -> bool {
        let vhat = [point[1].abs(), point[0]];
        match self.quadric.solve_stat(&vhat, self.tau) {
            Ok(stat) => stat <= self.c * self.c,
            Err(_) => false,
        }
    }

    fn check_on_null(&self, theta: [f64; 2]) -> Result<()> {
        let gap = (self.g(theta) - self.tau).abs();
        if gap > 1e-9 * (1.0 + self.tau.abs()) {
            return Err(Error::domain(format!(
                "center ({}, {}) is off the null: |g - tau| = {gap:e}",
                theta[0], theta[1]
            )));
        }
        Ok(())
    }

    /// Monte Carlo estimate of `P(θ̂ ∈ S(τ, c))` for `θ̂ ~ N(theta, I₂)`.
    pub fn coverage_probability(&self, theta: [f64; 2], n_draws: usize, seed: RngStream) -> Result<Coverage> {
        self.check_on_null(theta)?;
        if n_draws < 100_000 {
            return Err(Error::domain(format!("n_draws = {n_draws} below 100000")));
        }
        let blocks = n_draws.div_ceil(MC_BLOCK);
        let inside: usize = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let len = MC_BLOCK.min(n_draws - b * MC_BLOCK);
                let mut rng = seed.substream(b as u64).rng();
                (0..len)
                    .filter(|_| {
                        let z1: f64 = StandardNormal.sample(&mut rng);
                        let z2: f64 = StandardNormal.sample(&mut rng);
                        self.contains([theta[0] + z1, theta[1] + z2])
                    })
                    .count()
            })
            .sum();
        let estimate = inside as f64 / n_draws as f64;
        Ok(Coverage {
            estimate,
            mc_se: stats::binomial_se(estimate, n_draws),
            n_draws,
        })
    }

    /// Share of the circle of radius `r` around `theta` lying in `S(τ, c)`.
    pub fn arc_fraction(&self, theta: [f64; 2], r: f64, quad: &PolarQuadrature) -> f64 {
        arc_fraction(theta, r, quad, |p| self.contains(p))
    }

    /// Coverage by quadrature in polar coordinates around `theta`.
    pub fn polar_coverage_integral(&self, theta: [f64; 2], quad: &PolarQuadrature) -> Result<f64> {
        self.check_on_null(theta)?;
        polar_integral(theta, self.c, quad, |p| self.contains(p))
    }
}

/// `c²(1-ρ)²/(1+ρ)`: below this level the upper boundary has a kink.
pub fn kink_threshold(rho: f64, c: f64) -> f64 {
    c * c * (1.0 - rho).powi(2) / (1.0 + rho)
}

/// Share of angles `ω` with `center + r(cos ω, sin ω)` inside the set. The
/// circle is scanned at `n_angle` angles and each crossing is bisected.
pub fn arc_fraction(
    center: [f64; 2],
    r: f64,
    quad: &PolarQuadrature,
    inside: impl Fn([f64; 2]) -> bool,
) -> f64 {
    let at = |w: f64| inside([center[0] + r * w.cos(), center[1] + r * w.sin()]);
    let n = quad.n_angle.max(4);
    let step = std::f64::consts::TAU / n as f64;
    let flags: Vec<bool> = (0..n).map(|k| at(k as f64 * step)).collect();
    let mut measure = 0.0;
    for k in 0..n {
        let (a, b) = (flags[k], flags[(k + 1) % n]);
        let w0 = k as f64 * step;
        if a == b {
            if a {
                measure += 1.0;
            }
            continue;
        }
        let (mut lo, mut hi) = (w0, w0 + step);
        while hi - lo > quad.angle_tol {
            let mid = 0.5 * (lo + hi);
            if at(mid) == a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cross = 0.5 * (lo + hi);
        measure += if a { cross - w0 } else { w0 + step - cross } / step;
    }
    measure / n as f64
}

/// `P(center + Z ∈ set)` for `Z ~ N(0, I₂)`, given that the ball of radius
/// `head_radius` around `center` lies inside the set.
pub fn polar_integral(
    center: [f64; 2],
    head_radius: f64,
    quad: &PolarQuadrature,
    inside: impl Fn([f64; 2]) -> bool + Sync,
) -> Result<f64> {
    let nodes = NonZeroUsize::new(quad.nodes).ok_or_else(|| Error::domain("quadrature needs nodes"))?;
    if !(head_radius >= 0.0 && head_radius < quad.r_max) {
        return Err(Error::domain(format!(
            "head radius {head_radius} outside [0, {})",
            quad.r_max
        )));
    }
    let head = -(-0.5 * head_radius * head_radius).exp_m1();
    let rule = GaussLegendre::new(nodes);
    let tail = rule.par_integrate(head_radius, quad.r_max, |r| {
        arc_fraction(center, r, quad, &inside) * (-0.5 * r * r).exp() * r
    });
    Ok(head + tail)
}

/// Polar quadrature of the band `|x₂ - θ₂| ≤ c`, whose coverage is `2Φ(c) - 1`.
pub fn aux_band_integral(c: f64, quad: &PolarQuadrature) -> Result<f64> {
    polar_integral([0.0, 0.0], c, quad, |p| p[1].abs() <= c)
}

//! Critical values and comparator tests.
//!
//! * BN1: `Q(χ²₁, 1-α)` together with a check of the two sufficient
//!   conditions under which it controls size for d = 2.
//! * BN2: a two-step simulated critical value. A `1-η` confidence ball for
//!   the local parameter `h` is discretized, and for every grid `h` the
//!   `(1-α)/(1-η)` quantile of the simulated statistic `T*(h)` is computed
//!   on one shared sample of draws. The sup over the grid is returned.
//! * Projection `Q(χ²_d, 1-α)`, the Wald test and a percentile bootstrap.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dist;
use crate::error::{Error, Result};
use crate::gfunc::{self, Definiteness, GFunction};
use crate::input::EstimateInput;
use crate::invert::{ConfidenceInterval, TauGrid};
use crate::linalg;
use crate::quadric::DiagonalQuadric;
use crate::rng::RngStream;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Bn1,
    Bn2,
    Projection,
    Wald,
    NaiveBoot,
    Am,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bn1,
        Method::Bn2,
        Method::Projection,
        Method::Wald,
        Method::NaiveBoot,
        Method::Am,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bn1 => "BN1",
            Method::Bn2 => "BN2",
            Method::Projection => "Projection",
            Method::Wald => "Wald",
            Method::NaiveBoot => "NaiveBoot",
            Method::Am => "AM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "bn1" => Method::Bn1,
            "bn2" => Method::Bn2,
            "projection" | "proj" => Method::Projection,
            "wald" | "delta" => Method::Wald,
            "naiveboot" | "bootstrap" | "boot" => Method::NaiveBoot,
            "am" => Method::Am,
            _ => return Err(Error::domain(format!("unknown method {s:?}"))),
        })
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("α = {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn check_levels(alpha: f64, eta: f64) -> Result<()> {
    check_level(alpha)?;
    if !(eta > 0.0 && eta < alpha) {
        return Err(Error::domain(format!("η = {eta} must satisfy 0 < η < α = {alpha}")));
    }
    Ok(())
}

/// Outcome of the BN1 eligibility check at one null value.
#[derive(Debug, Clone, PartialEq)]
pub struct Bn1Eligibility {
    /// Curvature condition with `ρ ∈ [η-1, 1-η]`.
    pub condition_p2: bool,
    /// `ρ ∈ [0, 1-η]`.
    pub condition_p1: bool,
    pub eligible: bool,
    /// Left side of the curvature condition; `+∞` when `τ = g(θ⋆)`.
    pub curvature_lhs: f64,
    pub eta: f64,
    pub rho_p: f64,
    /// Eigenvalues of `sign(τ - g(θ⋆)) Σ̂^{1/2} H Σ̂^{1/2}`, descending.
    pub lambda: [f64; 2],
    pub note: Option<String>,
}

pub fn bn1_check(g: &GFunction, input: &EstimateInput, tau: f64, alpha: f64, eta: f64) -> Result<Bn1Eligibility> {
    check_levels(alpha, eta)?;
    if g.dim() != 2 || input.dim() != 2 {
        return Err(Error::Unsupported("BN1 eligibility is defined for d = 2".into()));
    }
    let diag = gfunc::diagnostics(g, input, tau)?;
    if diag.definiteness == Definiteness::Singular {
        return Err(Error::domain("Hessian at θ⋆ is singular"));
    }
    let lambda = [diag.lambda[0], diag.lambda[1]];
    if diag.equal_eigenvalues {
        return Ok(Bn1Eligibility {
            condition_p2: false,
            condition_p1: false,
            eligible: false,
            curvature_lhs: f64::INFINITY,
            eta,
            rho_p: f64::INFINITY,
            lambda,
            note: Some("equal eigenvalues: ρ_P undefined".into()),
        });
    }
    let rho = diag.rho_p.unwrap_or(f64::NAN);
    let c = dist::chi2_quantile(1, 1.0 - alpha)?.sqrt();
    let gap = (lambda[0] - lambda[1]).abs();
    let dev = (tau - g.value_at_star()).abs();
    let curvature_lhs = if dev == 0.0 || rho <= -1.0 {
        f64::INFINITY
    } else {
        (1.0 - rho) * gap.sqrt() / (2.0 * input.r_n() * (dev * (1.0 + rho)).sqrt())
    };
    let condition_p2 = curvature_lhs <= 1.0 / c && rho >= eta - 1.0 && rho <= 1.0 - eta;
    let condition_p1 = (0.0..=1.0 - eta).contains(&rho);
    Ok(Bn1Eligibility {
        condition_p2,
        condition_p1,
        eligible: condition_p2 || condition_p1,
        curvature_lhs,
        eta,
        rho_p: rho,
        lambda,
        note: None,
    })
}

/// Discretization of the `1-η` ball for `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HGrid {
    /// d = 2: `n_r` radii from 0 to the boundary inclusive × `n_angle` angles
    /// (`n_r = 1` is the center alone).
    Polar { n_r: usize, n_angle: usize },
    /// Any d: the cube lattice clipped to the ball, plus the `±` axis
    /// boundary points.
    Lattice { n_per_axis: usize },
}

impl HGrid {
    pub fn default_for(d: usize) -> Self {
        if d == 2 {
            HGrid::Polar { n_r: 15, n_angle: 24 }
        } else {
            HGrid::Lattice { n_per_axis: 7 }
        }
    }

    /// Grid points in the ball of the given radius.
    pub fn points(&self, d: usize, radius: f64) -> Result<Vec<DVector<f64>>> {
        match *self {
            HGrid::Polar { n_r, n_angle } => {
                if d != 2 {
                    return Err(Error::domain("polar h-grid needs d = 2"));
                }
                if n_r < 1 || n_angle < 1 {
                    return Err(Error::domain("polar h-grid needs n_r ≥ 1 and n_angle ≥ 1"));
                }
                let mut pts = vec![DVector::zeros(2)];
                for i in 1..n_r {
                    let r = radius * i as f64 / (n_r - 1) as f64;
                    for j in 0..n_angle {
                        let a = 2.0 * std::f64::consts::PI * j as f64 / n_angle as f64;
                        pts.push(DVector::from_row_slice(&[r * a.cos(), r * a.sin()]));
                    }
                }
                Ok(pts)
            }
            HGrid::Lattice { n_per_axis } => {
                if n_per_axis < 2 {
                    return Err(Error::domain("lattice h-grid needs n_per_axis ≥ 2"));
                }
                let total = (n_per_axis as f64).powi(d as i32);
                if total > 1e6 {
                    return Err(Error::domain(format!("lattice h-grid would have {total:.0} points")));
                }
                let mut pts = Vec::new();
                let mut idx = vec![0usize; d];
                loop {
                    let z = DVector::from_iterator(
                        d,
                        idx.iter()
                            .map(|&k| -radius + 2.0 * radius * k as f64 / (n_per_axis - 1) as f64),
                    );
                    if z.norm_squared() <= radius * radius * (1.0 + 1e-12) {
                        pts.push(z);
                    }
                    let mut pos = 0;
                    while pos < d {
                        idx[pos] += 1;
                        if idx[pos] < n_per_axis {
                            break;
                        }
                        idx[pos] = 0;
                        pos += 1;
                    }
                    if pos == d {
                        break;
                    }
                }
                for k in 0..d {
                    for s in [-1.0, 1.0] {
                        let mut z = DVector::zeros(d);
                        z[k] = s * radius;
                        if !pts.iter().any(|p| (p - &z).norm() < 1e-12 * (1.0 + radius)) {
                            pts.push(z);
                        }
                    }
                }
                Ok(pts)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bn2Config {
    pub alpha: f64,
    pub eta: f64,
    pub b_draws: usize,
    pub h_grid: HGrid,
    /// Squared radius of the `z` ball; `None` means `Q(χ²_d, 1-η)`.
    pub hz_radius_sq: Option<f64>,
    pub seed: RngStream,
    /// Pretesting on `‖h‖` is not supported; setting this is rejected.
    pub pretest_threshold: Option<f64>,
}

impl Bn2Config {
    pub fn new(alpha: f64, d: usize, seed: RngStream) -> Self {
        Self {
            alpha,
            eta: alpha / 10.0,
            b_draws: 2000,
            h_grid: HGrid::default_for(d),
            hz_radius_sq: None,
            seed,
            pretest_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_levels(self.alpha, self.eta)?;
        if self.b_draws < 500 {
            return Err(Error::domain(format!("BN2 needs at least 500 draws, got {}", self.b_draws)));
        }
        if let Some(r) = self.hz_radius_sq {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::domain("hz_radius_sq must be positive"));
            }
        }
        if self.pretest_threshold.is_some() {
            return Err(Error::Unsupported("BN2 pretest on ‖h‖ has no default threshold".into()));
        }
        Ok(())
    }

    pub fn radius_sq(&self, d: usize) -> Result<f64> {
        match self.hz_radius_sq {
            Some(r) => Ok(r),
            None => dist::chi2_quantile(d as u32, 1.0 - self.eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bn2Diagnostics {
    /// Grid point attaining the sup.
    pub argmax_h: DVector<f64>,
    pub grid_points: usize,
    pub draws: usize,
    pub acceptance_rate: f64,
    /// Inner problems solved (the rest were pruned as unable to move the quantile).
    pub inner_solves: usize,
    /// Inner problems where the solver failed and `‖Z‖²` was used instead.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CvDiagnostics {
    None,
    Bn1(Bn1Eligibility),
    Bn2(Bn2Diagnostics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValue {
    pub value: f64,
    pub method: Method,
    pub diagnostics: CvDiagnostics,
}

/// `Q(χ²₁, 1-α)` with the eligibility record at `τ`.
pub fn bn1_critical_value(g: &GFunction, input: &EstimateInput, tau: f64, alpha: f64, eta: f64) -> Result<CriticalValue> {
    let eligibility = bn1_check(g, input, tau, alpha, eta)?;
    Ok(CriticalValue {
        value: dist::chi2_quantile(1, 1.0 - alpha)?,
        method: Method::Bn1,
        diagnostics: CvDiagnostics::Bn1(eligibility),
    })
}

pub fn projection_critical_value(d: usize, alpha: f64) -> Result<CriticalValue> {
    check_level(alpha)?;
    if d == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    Ok(CriticalValue {
        value: dist::chi2_quantile(d as u32, 1.0 - alpha)?,
        method: Method::Projection,
        diagnostics: CvDiagnostics::None,
    })
}

/// Comparator slot for the Andrews–Mikusheva critical value.
pub fn am_critical_value(_g: &GFunction, _input: &EstimateInput, _alpha: f64) -> Result<CriticalValue> {
    Err(Error::NotImplemented("AM critical value".into()))
}

/// Draws `Z ~ N(0, I_d)` conditional on `‖Z‖² ≤ radius_sq`, sorted by
/// decreasing norm.
fn conditional_draws(d: usize, radius_sq: f64, b: usize, seed: RngStream) -> Result<(Vec<DVector<f64>>, f64)> {
    let mut rng = seed.rng();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(b);
    let mut attempts = 0usize;
    while out.len() < b {
        attempts += 1;
        let z = DVector::from_iterator(d, (0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        if z.norm_squared() <= radius_sq {
            out.push(z);
        }
        if attempts >= 10_000 && (out.len() as f64) < 1e-3 * attempts as f64 {
            return Err(Error::domain(format!(
                "rejection sampling acceptance {:.2e} below 1e-3",
                out.len() as f64 / attempts as f64
            )));
        }
    }
    out.sort_by(|a, b| b.norm_squared().total_cmp(&a.norm_squared()));
    Ok((out, b as f64 / attempts as f64))
}

/// BN2 critical value `ĉ`.
pub fn bn2_critical_value(g: &GFunction, input: &EstimateInput, cfg: &Bn2Config) -> Result<CriticalValue> {
    cfg.validate()?;
    let d = input.dim();
    if g.dim() != d {
        return Err(Error::domain("g and estimate dimensions differ"));
    }
    let h_star = g.hessian_at_star();
    let h_eig = linalg::sym_eig(&h_star)?;
    let h_scale = h_eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if h_scale == 0.0 || h_eig.values.iter().any(|v| v.abs() <= 1e-12 * h_scale) {
        return Err(Error::domain("BN2 needs a full-rank Hessian at θ⋆"));
    }

    // Inner problem in u = Σ̂^{-1/2} t coordinates: min ‖Σ̂^{-1/2}h + Z - u‖²
    // subject to u' B u = h'Hh with B = Σ̂^{1/2} H Σ̂^{1/2} = Q Λ Q'.
    let s_half = input.sigma_sqrt();
    let b_mat = s_half * &h_star * s_half;
    let b_eig = linalg::sym_eig(&((&b_mat + b_mat.transpose()) * 0.5))?;
    let quad = DiagonalQuadric::new(b_eig.values.iter().copied().collect());
    let qt = b_eig.vectors.transpose();

    let radius_sq = cfg.radius_sq(d)?;
    let (draws, acceptance_rate) = conditional_draws(d, radius_sq, cfg.b_draws, cfg.seed)?;
    let qz: Vec<f64> = draws.iter().flat_map(|z| (&qt * z).iter().copied().collect::<Vec<_>>()).collect();
    let znorm: Vec<f64> = draws.iter().map(|z| z.norm_squared()).collect();

    let p = (1.0 - cfg.alpha) / (1.0 - cfg.eta);
    let rank = stats::ceil_rank(p, cfg.b_draws);
    let keep = cfg.b_draws - rank + 1;

    let local = input.local_parameter();
    let grid = cfg.h_grid.points(d, radius_sq.sqrt())?;
    let hs: Vec<DVector<f64>> = grid.iter().map(|z| &local - s_half * z).collect();

    // Quantile of T*(h) if it exceeds `floor`, else None; plus solve counts.
    let quantile_above = |h: &DVector<f64>, floor: f64| -> (Option<f64>, usize, usize) {
        let target = linalg::quad_form(&h_star, h);
        let a = &qt * (input.sigma_inv_sqrt() * h);
        let mut vhat = vec![0.0; d];
        let mut heap: BinaryHeap<Reverse<OrdF64>> = BinaryHeap::with_capacity(keep + 1);
        let (mut solves, mut fallbacks) = (0, 0);
        for (b, zn) in znorm.iter().enumerate() {
            let bar = if heap.len() == keep { floor.max(heap.peek().unwrap().0 .0) } else { floor };
            // T* ≤ ‖Z‖² because t = h is feasible, and draws come in decreasing ‖Z‖².
            if *zn <= bar {
                break;
            }
            for i in 0..d {
                vhat[i] = a[i] + qz[b * d + i];
            }
            if quad.upper_bound(&vhat, target) <= bar {
                continue;
            }
            solves += 1;
            let t = match quad.solve_stat(&vhat, target) {
                Ok(s) if s.is_finite() => s.min(*zn),
                _ => {
                    fallbacks += 1;
                    *zn
                }
            };
            if t <= floor {
                continue;
            }
            if heap.len() < keep {
                heap.push(Reverse(OrdF64(t)));
            } else if t > heap.peek().unwrap().0 .0 {
                heap.pop();
                heap.push(Reverse(OrdF64(t)));
            }
        }
        let q = (heap.len() == keep).then(|| heap.peek().unwrap().0 .0);
        (q, solves, fallbacks)
    };

    // A few grid points are solved exactly; their max is a floor that lets
    // every other point stop as soon as it cannot beat it. The sup is exact.
    let n = hs.len();
    let mut pilot: Vec<usize> = vec![0, n / 4, n / 2, 3 * n / 4, n - 1];
    pilot.dedup();
    let pilot_results: Vec<(Option<f64>, usize, usize)> =
        pilot.par_iter().map(|&i| quantile_above(&hs[i], f64::NEG_INFINITY)).collect();
    let floor = pilot_results.iter().filter_map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let rest: Vec<(Option<f64>, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|i| if pilot.contains(&i) { (None, 0, 0) } else { quantile_above(&hs[i], floor) })
        .collect();

    let mut per_h: Vec<(f64, usize, usize)> = rest.iter().map(|r| (r.0.unwrap_or(f64::NEG_INFINITY), r.1, r.2)).collect();
    for (k, &i) in pilot.iter().enumerate() {
        let r = pilot_results[k];
        per_h[i] = (r.0.unwrap_or(f64::NEG_INFINITY), r.1, r.2);
    }
    let (best, _) = per_h
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, r)| if r.0 > acc.1 { (i, r.0) } else { acc });
    Ok(CriticalValue {
        value: per_h[best].0,
        method: Method::Bn2,
        diagnostics: CvDiagnostics::Bn2(Bn2Diagnostics {
            argmax_h: hs[best].clone(),
            grid_points: hs.len(),
            draws: cfg.b_draws,
            acceptance_rate,
            inner_solves: per_h.iter().map(|r| r.1).sum(),
            fallbacks: per_h.iter().map(|r| r.2).sum(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestDecision {
    pub method: Method,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub flags: Vec<String>,
}

/// Delta-method Wald test of `g(θ) = τ`.
pub fn wald_test(g: &GFunction, input: &EstimateInput, tau: f64, alpha: f64) -> Result<TestDecision> {
    check_level(alpha)?;
    let (statistic, _) = wald_statistic(g, input, tau)?;
    let critical_value = dist::chi2_quantile(1, 1.0 - alpha)?;
    Ok(TestDecision {
        method: Method::Wald,
        statistic,
        critical_value,
        reject: statistic > critical_value,
        flags: Vec::new(),
    })
}

/// The Wald statistic and the delta-method variance `∇g'Σ̂∇g`.
pub fn wald_statistic(g: &GFunction, input: &EstimateInput, tau: f64) -> Result<(f64, f64)> {
    let grad = g.grad(input.theta_hat());
    if grad.norm() < 1e-12 {
        return Err(Error::DegenerateGradient(format!(
            "‖∇g(θ̂)‖ = {:.3e}",
            grad.norm()
        )));
    }
    let var = linalg::quad_form(input.sigma_hat(), &grad);
    let diff = g.eval(input.theta_hat()) - tau;
    Ok((input.r_n().powi(2) * diff * diff / var, var))
}

/// Percentile interval of `g(θ*)` with `θ* ~ N(θ̂, Σ̂/r_n²)`.
pub fn naive_bootstrap_interval(
    g: &GFunction,
    input: &EstimateInput,
    alpha: f64,
    b: usize,
    seed: RngStream,
) -> Result<ConfidenceInterval> {
    check_level(alpha)?;
    if b < 500 {
        return Err(Error::domain(format!("bootstrap needs at least 500 draws, got {b}")));
    }
    let d = input.dim();
    let chol = linalg::cholesky_lower(input.sigma_hat())?;
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(b);
    let mut z = DVector::zeros(d);
    let scale = 1.0 / input.r_n();
    for _ in 0..b {
        for i in 0..d {
            z[i] = StandardNormal.sample(&mut rng);
        }
        let theta = input.theta_hat() + (&chol * &z) * scale;
        values.push(g.eval(&theta));
    }
    let lower = stats::empirical_quantile_in_place(&mut values, alpha / 2.0);
    let upper = stats::empirical_quantile_in_place(&mut values, 1.0 - alpha / 2.0);
    Ok(ConfidenceInterval {
        method: Method::NaiveBoot,
        level: 1.0 - alpha,
        lower,
        upper,
        acceptance_gaps: Vec::new(),
        tau_grid: TauGrid::default(),
        critical_value: None,
        eligibility_holes: Vec::new(),
        flags: Vec::new(),
    })
}

/// `h = r_n(θ̂ - θ⋆) - Σ̂^{1/2} z` for a point `z` of the ball.
pub fn local_parameter_ball_point(input: &EstimateInput, z: &DVector<f64>) -> DVector<f64> {
    input.local_parameter() - input.sigma_sqrt() * z
}

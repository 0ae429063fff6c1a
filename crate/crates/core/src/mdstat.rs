//! The minimum-distance statistic
//!
//! ```text
//!     T̂(τ) = inf { r_n² (θ̂ - θ)' Σ̂⁻¹ (θ̂ - θ) : g(θ) = τ }
//! ```
//!
//! Transformations with a quadric level set (product, quadratic forms) are
//! solved exactly through [`crate::quadric`]. Other transformations use a
//! damped Newton iteration on the KKT system from several feasible seeds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::input::EstimateInput;
use crate::linalg;
use crate::quadric::{DiagonalQuadric, Extreme};

#[derive(Debug, Clone, PartialEq)]
pub struct MdResult {
    pub statistic: f64,
    pub minimizer: DVector<f64>,
    pub converged: bool,
    /// Two minimizers at (numerically) the same distance.
    pub branch_tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Feasibility tolerance, scaled by `1 + |τ|`.
    pub constraint_tol: f64,
    pub stat_rel_tol: f64,
    /// Half-width of the search box in standardized units.
    pub search_sd: f64,
    pub multistart: usize,
    pub max_iter: usize,
    pub tie_stat_tol: f64,
    pub tie_location_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            constraint_tol: 1e-9,
            stat_rel_tol: 1e-8,
            search_sd: 8.0,
            multistart: 8,
            max_iter: 100,
            tie_stat_tol: 1e-7,
            tie_location_tol: 1e-3,
        }
    }
}

/// Grid used by [`md_statistic_grid_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_per_axis: usize,
    /// Half-width of the box in units of `√(max eig Σ̂)/r_n`.
    pub half_width_sd: f64,
    /// Grid points with `|g - τ| ≤ band` count as feasible.
    pub band: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_per_axis: 2001,
            half_width_sd: 6.0,
            band: 1e-12,
        }
    }
}

/// One-shot convenience wrapper around [`MdSolver`].
pub fn md_statistic(g: &GFunction, input: &EstimateInput, tau: f64, opts: &SolverOptions) -> Result<MdResult> {
    MdSolver::new(g, input, *opts)?.solve(tau)
}

/// Solver with the τ-independent work (whitening, eigen-decompositions)
/// done once, for repeated evaluation over a τ scan.
#[derive(Debug, Clone)]
pub struct MdSolver<'a> {
    g: &'a GFunction,
    input: &'a EstimateInput,
    opts: SolverOptions,
    path: Path,
}

#[derive(Debug, Clone)]
enum Path {
    Quadric(QuadricPath),
    Monomial(u32),
    Generic,
}

#[derive(Debug, Clone)]
struct QuadricPath {
    quad: DiagonalQuadric,
    vhat: Vec<f64>,
    /// `θ = center + back · v`.
    back: DMatrix<f64>,
    center: DVector<f64>,
    offset: f64,
}

impl<'a> MdSolver<'a> {
    pub fn new(g: &'a GFunction, input: &'a EstimateInput, opts: SolverOptions) -> Result<Self> {
        if g.dim() != input.dim() {
            return Err(Error::domain(format!(
                "g has dimension {}, estimate has {}",
                g.dim(),
                input.dim()
            )));
        }
        let path = if let Some(qs) = g.quadratic_structure() {
            // Whitening u = L(θ - c) with L = r_n Σ̂^{-1/2}; the level set becomes
            // u' B u = τ - offset with B = Σ̂^{1/2} A Σ̂^{1/2} / r_n².
            let r2 = input.r_n() * input.r_n();
            let s_half = input.sigma_sqrt();
            let b = (s_half * &qs.a * s_half) / r2;
            let eig = linalg::sym_eig(&((&b + b.transpose()) * 0.5))?;
            let uhat = input.sigma_inv_sqrt() * (input.theta_hat() - &qs.center) * input.r_n();
            let vhat = (eig.vectors.transpose() * uhat).iter().copied().collect();
            let back = (s_half * &eig.vectors) / input.r_n();
            Path::Quadric(QuadricPath {
                quad: DiagonalQuadric::new(eig.values.iter().copied().collect()),
                vhat,
                back,
                center: qs.center,
                offset: qs.offset,
            })
        } else if let Some(p) = g.monomial_power() {
            Path::Monomial(p)
        } else {
            Path::Generic
        };
        Ok(Self { g, input, opts, path })
    }

    pub fn solve(&self, tau: f64) -> Result<MdResult> {
        if !tau.is_finite() {
            return Err(Error::domain(format!("τ = {tau} is not finite")));
        }
        match &self.path {
            Path::Quadric(q) => self.solve_quadric(q, tau),
            Path::Monomial(p) => self.solve_monomial(*p, tau),
            Path::Generic => self.solve_generic(tau),
        }
    }

    /// Statistic only; `+∞` where the level set is empty.
    pub fn statistic(&self, tau: f64) -> Result<f64> {
        match self.solve(tau) {
            Ok(r) => Ok(r.statistic),
            Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    fn solve_quadric(&self, q: &QuadricPath, tau: f64) -> Result<MdResult> {
        let n = q.vhat.len();
        let mut v = vec![0.0; n];
        let target = tau - q.offset;
        let sol = q
            .quad
            .solve(&q.vhat, target, &mut v)
            .map_err(|_| Error::Infeasible(format!("{} never equals {tau}", self.g.name())))?;
        let to_theta = |v: &[f64]| &q.center + &q.back * DVector::from_column_slice(v);
        let minimizer = to_theta(&v);

        let mut branch_tie = false;
        for (k, which) in [Extreme::Top, Extreme::Bottom].into_iter().enumerate() {
            if sol.extreme_norm[k] == 0.0 || sol.mirror_gap[k] >= self.opts.tie_stat_tol {
                continue;
            }
            let mut mirrored = v.clone();
            for i in q.quad.extreme_range(which) {
                mirrored[i] = -mirrored[i];
            }
            if (to_theta(&mirrored) - &minimizer).norm() > self.opts.tie_location_tol {
                branch_tie = true;
            }
        }
        Ok(MdResult {
            statistic: sol.stat.max(0.0),
            minimizer,
            converged: true,
            branch_tie,
        })
    }

    fn solve_monomial(&self, p: u32, tau: f64) -> Result<MdResult> {
        let roots: Vec<f64> = if p % 2 == 1 {
            vec![tau.signum() * tau.abs().powf(1.0 / p as f64)]
        } else if tau < 0.0 {
            return Err(Error::Infeasible(format!("θ^{p} never equals {tau}")));
        } else {
            let r = tau.powf(1.0 / p as f64);
            vec![r, -r]
        };
        let th = self.input.theta_hat()[0];
        let w = self.input.r_n().powi(2) / self.input.sigma_hat()[(0, 0)];
        let stats: Vec<f64> = roots.iter().map(|r| w * (th - r) * (th - r)).collect();
        let best = if stats.len() == 2 && stats[1] < stats[0] { 1 } else { 0 };
        let branch_tie = stats.len() == 2
            && (stats[0] - stats[1]).abs() < self.opts.tie_stat_tol
            && (roots[0] - roots[1]).abs() > self.opts.tie_location_tol;
        Ok(MdResult {
            statistic: stats[best],
            minimizer: DVector::from_element(1, roots[best]),
            converged: true,
            branch_tie,
        })
    }

    fn constraint_tol(&self, tau: f64) -> f64 {
        self.opts.constraint_tol * (1.0 + tau.abs())
    }

    fn solve_generic(&self, tau: f64) -> Result<MdResult> {
        let input = self.input;
        let theta_hat = input.theta_hat();
        let ctol = self.constraint_tol(tau);
        if (self.g.eval(theta_hat) - tau).abs() <= ctol {
            return Ok(MdResult {
                statistic: 0.0,
                minimizer: theta_hat.clone(),
                converged: true,
                branch_tie: false,
            });
        }
        let seeds = self.feasible_seeds(tau);
        if seeds.is_empty() {
            return Err(Error::Infeasible(format!(
                "no point with {} = {tau} within {} standardized units of θ̂",
                self.g.name(),
                self.opts.search_sd
            )));
        }

        // (statistic, point, converged)
        let mut found: Vec<(f64, DVector<f64>, bool)> = Vec::new();
        for seed in seeds {
            let seed_stat = input.distance_sq(&seed);
            found.push((seed_stat, seed.clone(), false));
            if let Some(x) = self.kkt_newton(seed, tau) {
                found.push((input.distance_sq(&x), x, true));
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (statistic, minimizer, converged) = found[0].clone();
        let branch_tie = found.iter().skip(1).any(|(s, x, c)| {
            *c && (s - statistic).abs() < self.opts.tie_stat_tol
                && (x - &minimizer).norm() > self.opts.tie_location_tol
        });
        Ok(MdResult {
            statistic,
            minimizer,
            converged,
            branch_tie,
        })
    }

    /// Feasible starting points: the first crossing of `{g = τ}` along rays
    /// from θ̂ in the standardized eigen-directions of the Hessian at θ⋆ and
    /// along the local Newton direction, plus a Gauss–Newton projection.
    fn feasible_seeds(&self, tau: f64) -> Vec<DVector<f64>> {
        let input = self.input;
        let theta_hat = input.theta_hat();
        let r_n = input.r_n();
        let d = input.dim();
        let s_half = input.sigma_sqrt();

        let mut dirs: Vec<DVector<f64>> = Vec::new();
        let h = self.g.hessian_at_star();
        let m = s_half * &h * s_half;
        if let Ok(eig) = linalg::sym_eig(&((&m + m.transpose()) * 0.5)) {
            for k in 0..d {
                let e = s_half * eig.vectors.column(k) / r_n;
                dirs.push(e.clone());
                dirs.push(-e);
            }
        }
        let grad = self.g.grad(theta_hat);
        let sg = input.sigma_hat() * &grad;
        let sg_norm = linalg::quad_form(input.sigma_hat(), &grad).sqrt();
        if sg_norm > 0.0 {
            let e = sg / (sg_norm * r_n);
            dirs.push(e.clone());
            dirs.push(-e);
        }
        let to_star = input.theta_star() - theta_hat;
        let star_len = (input.distance_sq(input.theta_star())).sqrt();
        if star_len > 0.0 {
            dirs.push(to_star / star_len);
        }

        let ctol = self.constraint_tol(tau);
        let f = |x: &DVector<f64>| self.g.eval(x) - tau;
        let mut seeds: Vec<DVector<f64>> = Vec::new();
        let steps = 64;
        for dir in dirs {
            let mut t_prev = 0.0;
            let mut f_prev = f(theta_hat);
            for k in 1..=steps {
                let t = self.opts.search_sd * k as f64 / steps as f64;
                let x = theta_hat + &dir * t;
                let fx = f(&x);
                if !fx.is_finite() {
                    break;
                }
                if fx.signum() != f_prev.signum() || fx.abs() <= ctol {
                    let (mut a, mut b, mut fa) = (t_prev, t, f_prev);
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        let fm = f(&(theta_hat + &dir * mid));
                        if fm.signum() == fa.signum() {
                            a = mid;
                            fa = fm;
                        } else {
                            b = mid;
                        }
                        if b - a <= 1e-15 * (1.0 + b) {
                            break;
                        }
                    }
                    let x = theta_hat + &dir * b;
                    if f(&x).abs() <= ctol {
                        seeds.push(x);
                    } else {
                        let xa = theta_hat + &dir * a;
                        if f(&xa).abs() <= ctol {
                            seeds.push(xa);
                        }
                    }
                    break;
                }
                t_prev = t;
                f_prev = fx;
            }
        }
        if let Some(x) = self.gauss_newton_projection(theta_hat.clone(), tau) {
            seeds.push(x);
        }
        seeds.sort_by(|a, b| self.input.distance_sq(a).total_cmp(&self.input.distance_sq(b)));
        seeds.truncate(self.opts.multistart.max(1));
        seeds
    }

    fn in_region(&self, x: &DVector<f64>) -> bool {
        let half = self.opts.search_sd * self.input.sigma_eigen().max_value().sqrt() / self.input.r_n();
        (x - self.input.theta_hat()).iter().all(|v| v.abs() <= half)
    }

    /// Minimum-norm steps onto `{g = τ}` in the Σ̂ metric.
    fn gauss_newton_projection(&self, mut x: DVector<f64>, tau: f64) -> Option<DVector<f64>> {
        let ctol = self.constraint_tol(tau);
        for _ in 0..self.opts.max_iter {
            let r = self.g.eval(&x) - tau;
            if r.abs() <= ctol {
                return self.in_region(&x).then_some(x);
            }
            let gr = self.g.grad(&x);
            let sg = self.input.sigma_hat() * &gr;
            let denom = gr.dot(&sg);
            if !(denom > 0.0) || !r.is_finite() {
                return None;
            }
            x -= sg * (r / denom);
        }
        None
    }

    /// Damped Newton on `W(x - θ̂) + μ∇g(x) = 0, g(x) = τ` with
    /// `W = r_n² Σ̂⁻¹`, backtracking on the residual norm.
    fn kkt_newton(&self, mut x: DVector<f64>, tau: f64) -> Option<DVector<f64>> {
        let input = self.input;
        let d = input.dim();
        let w = input.sigma_inv() * input.r_n().powi(2);
        let theta_hat = input.theta_hat();
        let ctol = self.constraint_tol(tau);

        let residual = |x: &DVector<f64>, mu: f64| -> (DVector<f64>, f64) {
            let mut r = DVector::zeros(d + 1);
            let gx = &w * (x - theta_hat) + self.g.grad(x) * mu;
            r.rows_mut(0, d).copy_from(&gx);
            r[d] = self.g.eval(x) - tau;
            let n = r.norm();
            (r, n)
        };

        let grad = self.g.grad(&x);
        let gg = grad.norm_squared();
        if gg == 0.0 {
            return None;
        }
        let mut mu = -grad.dot(&(&w * (&x - theta_hat))) / gg;
        let (mut r, mut rn) = residual(&x, mu);
        let scale = 1.0 + (&w * (&x - theta_hat)).norm();

        for _ in 0..self.opts.max_iter {
            if r[d].abs() <= ctol && r.rows(0, d).norm() <= 1e-10 * scale {
                return self.in_region(&x).then_some(x);
            }
            let mut jac = DMatrix::zeros(d + 1, d + 1);
            let gx = self.g.grad(&x);
            let top = &w + self.g.hess(&x) * mu;
            jac.view_mut((0, 0), (d, d)).copy_from(&top);
            for i in 0..d {
                jac[(i, d)] = gx[i];
                jac[(d, i)] = gx[i];
            }
            let step = jac.lu().solve(&(-&r))?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let xn = &x + step.rows(0, d) * alpha;
                let mun = mu + step[d] * alpha;
                let (rn_vec, rn_new) = residual(&xn, mun);
                if rn_new.is_finite() && rn_new < (1.0 - 1e-4 * alpha) * rn {
                    x = xn;
                    mu = mun;
                    r = rn_vec;
                    rn = rn_new;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (r[d].abs() <= ctol && r.rows(0, d).norm() <= 1e-7 * scale && self.in_region(&x)).then_some(x)
    }
}

/// Brute-force upper bound on the statistic for d = 2: roots of `g - τ`
/// located along every grid row and column, followed by a golden-section
/// polish along the branch through the best root.
pub fn md_statistic_grid_oracle(g: &GFunction, input: &EstimateInput, tau: f64, grid: &GridSpec) -> Result<f64> {
    if g.dim() != 2 || input.dim() != 2 {
        return Err(Error::Unsupported("grid oracle needs d = 2".into()));
    }
    if grid.n_per_axis < 3 {
        return Err(Error::domain("grid needs at least 3 points per axis"));
    }
    let th = input.theta_hat();
    let half = grid.half_width_sd * input.sigma_eigen().max_value().sqrt() / input.r_n();
    let n = grid.n_per_axis;
    let step = 2.0 * half / (n - 1) as f64;
    let axis = |c: usize, k: usize| th[c] - half + step * k as f64;

    let mut probe = DVector::zeros(2);
    let mut f = |x1: f64, x2: f64| {
        probe[0] = x1;
        probe[1] = x2;
        g.eval(&probe) - tau
    };
    let dist = |x1: f64, x2: f64| input.distance_sq(&DVector::from_row_slice(&[x1, x2]));

    // Best feasible point and which coordinate parameterizes its branch.
    let mut best = (f64::INFINITY, 0.0, 0.0, 0usize);
    for free in 0..2 {
        let fixed = 1 - free;
        for i in 0..n {
            let a = axis(fixed, i);
            let at = |s: f64| if free == 1 { (a, s) } else { (s, a) };
            let mut s_prev = axis(free, 0);
            let (p0, p1) = at(s_prev);
            let mut f_prev = f(p0, p1);
            for j in 0..n {
                let s = axis(free, j);
                let (x1, x2) = at(s);
                let fs = if j == 0 { f_prev } else { f(x1, x2) };
                if fs.abs() <= grid.band {
                    let d = dist(x1, x2);
                    if d < best.0 {
                        best = (d, x1, x2, free);
                    }
                }
                if j > 0 && fs.signum() != f_prev.signum() && fs != 0.0 && f_prev != 0.0 {
                    let (mut lo, mut hi, mut flo) = (s_prev, s, f_prev);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let (m1, m2) = at(mid);
                        let fm = f(m1, m2);
                        if fm.signum() == flo.signum() {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    let (r1, r2) = at(0.5 * (lo + hi));
                    let d = dist(r1, r2);
                    if d < best.0 {
                        best = (d, r1, r2, free);
                    }
                }
                s_prev = s;
                f_prev = fs;
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Infeasible(format!("no grid point with {} = {tau}", g.name())));
    }

    // Polish: move the fixed coordinate, re-solve the free one by Newton.
    let (d0, x1, x2, free) = best;
    let fixed = 1 - free;
    let start = [x1, x2];
    let ctol = 1e-12 * (1.0 + tau.abs());
    let eval_branch = |a: f64| -> f64 {
        let mut x = DVector::from_row_slice(&start);
        x[fixed] = a;
        for _ in 0..50 {
            let r = g.eval(&x) - tau;
            if r.abs() <= ctol {
                return input.distance_sq(&x);
            }
            let slope = g.grad(&x)[free];
            if slope == 0.0 || !slope.is_finite() {
                return f64::INFINITY;
            }
            x[free] -= r / slope;
        }
        f64::INFINITY
    };
    let polished = golden_min(eval_branch, start[fixed] - step, start[fixed] + step, 80);
    Ok(d0.min(polished))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = fc.min(fd);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        best = best.min(fc).min(fd);
    }
    best
}

/// Closed form for `g = θ₁θ₂` with diagonal `Σ̂ = diag(σ₁², σ₂²)`.
///
/// For `τ ≠ 0` the profile over `θ₁` (with `θ₂ = τ/θ₁`) has stationary points
/// at the real roots of `σ₂²θ₁⁴ - σ₂²θ̂₁θ₁³ + σ₁²τθ̂₂θ₁ - σ₁²τ² = 0`. All of
/// them are found and Newton-polished; the smallest profile value wins.
pub fn mediation_closed_form(theta_hat: [f64; 2], sigma: &DMatrix<f64>, r_n: f64, tau: f64) -> Result<MdResult> {
    if sigma.shape() != (2, 2) {
        return Err(Error::domain("Σ̂ must be 2x2"));
    }
    let (s1, s2) = (sigma[(0, 0)], sigma[(1, 1)]);
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::domain("Σ̂ diagonal must be positive"));
    }
    if sigma[(0, 1)] != 0.0 || sigma[(1, 0)] != 0.0 {
        return Err(Error::domain("Σ̂ must be diagonal"));
    }
    if !(r_n > 0.0) {
        return Err(Error::domain("r_n must be positive"));
    }
    let [t1, t2] = theta_hat;
    let r2 = r_n * r_n;
    let opts = SolverOptions::default();

    if tau == 0.0 {
        let a = r2 * t1 * t1 / s1;
        let b = r2 * t2 * t2 / s2;
        let (statistic, minimizer) = if a <= b { (a, [0.0, t2]) } else { (b, [t1, 0.0]) };
        let branch_tie = (a - b).abs() < opts.tie_stat_tol && (t1.abs() + t2.abs()) > opts.tie_location_tol;
        return Ok(MdResult {
            statistic,
            minimizer: DVector::from_row_slice(&minimizer),
            converged: true,
            branch_tie,
        });
    }

    let profile = |x: f64| r2 * ((t1 - x).powi(2) / s1 + (t2 - tau / x).powi(2) / s2);
    // d/dx of profile, up to the positive factor 2r²/(s1 s2 x³).
    let dprofile = |x: f64| s2 * x.powi(4) - s2 * t1 * x.powi(3) + s1 * tau * t2 * x - s1 * tau * tau;
    let ddprofile = |x: f64| 4.0 * s2 * x.powi(3) - 3.0 * s2 * t1 * x * x + s1 * tau * t2;

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for root in real_roots(&[-s1 * tau * tau, s1 * tau * t2, 0.0, -s2 * t1, s2]) {
        let mut x = root;
        for _ in 0..8 {
            let dd = ddprofile(x);
            if dd == 0.0 {
                break;
            }
            let next = x - dprofile(x) / dd;
            if !next.is_finite() || next.signum() != root.signum() {
                break;
            }
            x = next;
        }
        if x != 0.0 {
            candidates.push((profile(x), x));
        }
    }
    if candidates.is_empty() {
        return Err(Error::Internal("profile has no stationary point".into()));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (statistic, x) = candidates[0];
    let branch_tie = candidates.iter().skip(1).any(|(s, y)| {
        (s - statistic).abs() < opts.tie_stat_tol
            && ((y - x).powi(2) + (tau / y - tau / x).powi(2)).sqrt() > opts.tie_location_tol
    });
    Ok(MdResult {
        statistic,
        minimizer: DVector::from_row_slice(&[x, tau / x]),
        converged: true,
        branch_tie,
    })
}

/// Real roots of the polynomial `Σ cᵢ xⁱ` (ascending coefficients), located
/// between consecutive roots of its derivative and refined by bisection.
fn real_roots(coef: &[f64]) -> Vec<f64> {
    let mut c = coef.to_vec();
    while c.len() > 1 && c[c.len() - 1] == 0.0 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        return vec![-c[0] / c[1]];
    }
    let eval = |x: f64| c.iter().rev().fold(0.0, |acc, a| acc * x + a);
    let lead = c[deg];
    let bound = 1.0 + c[..deg].iter().map(|a| (a / lead).abs()).fold(0.0, f64::max);
    let deriv: Vec<f64> = (1..=deg).map(|i| c[i] * i as f64).collect();
    let mut knots = vec![-bound];
    knots.extend(real_roots(&deriv).into_iter().filter(|x| x.abs() < bound));
    knots.push(bound);
    knots.sort_by(f64::total_cmp);

    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (eval(a), eval(b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        let sa = fa.signum();
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if eval(m).signum() == sa {
                a = m;
            } else {
                b = m;
            }
        }
        roots.push(0.5 * (a + b));
    }
    if eval(bound) == 0.0 {
        roots.push(bound);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_input(th: [f64; 2]) -> EstimateInput {
        EstimateInput::new(
            DVector::from_row_slice(&th),
            DMatrix::identity(2, 2),
            1.0,
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn product_examples() {
        let g = GFunction::product();
        let r = md_statistic(&g, &identity_input([2.0, 3.0]), 6.0, &opts()).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((&r.minimizer - DVector::from_row_slice(&[2.0, 3.0])).norm() < 1e-9);

        let r = md_statistic(&g, &identity_input([2.0, 3.0]), 0.0, &opts()).unwrap();
        assert!((r.statistic - 4.0).abs() < 1e-10);
        assert!((&r.minimizer - DVector::from_row_slice(&[0.0, 3.0])).norm() < 1e-9);
        assert!(!r.branch_tie);

        let r = md_statistic(&g, &identity_input([1.0, 1.0]), 0.0, &opts()).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-10);
        assert!(r.branch_tie);
    }

    #[test]
    fn circle_example() {
        let g = GFunction::quadratic_form(DMatrix::identity(2, 2)).unwrap();
        let r = md_statistic(&g, &identity_input([3.0, 0.0]), 1.0, &opts()).unwrap();
        assert!((r.statistic - 4.0).abs() < 1e-10);
        assert!(md_statistic(&g, &identity_input([3.0, 0.0]), -1.0, &opts()).is_err());
    }

    #[test]
    fn plug_in_is_zero() {
        let g = GFunction::product();
        let input = EstimateInput::from_standard_errors_2d([0.7, -1.3], [0.4, 0.9], 0.3, 2.0, [0.0; 2]).unwrap();
        let tau = g.eval(input.theta_hat());
        let r = md_statistic(&g, &input, tau, &opts()).unwrap();
        assert!(r.statistic < 1e-18);
    }

    #[test]
    fn monomial_roots() {
        let input = EstimateInput::new(
            DVector::from_element(1, 1.5),
            DMatrix::from_element(1, 1, 0.25),
            2.0,
            DVector::zeros(1),
        )
        .unwrap();
        let g = GFunction::monomial(3).unwrap();
        let r = md_statistic(&g, &input, -8.0, &opts()).unwrap();
        assert!((r.minimizer[0] + 2.0).abs() < 1e-12);
        assert!((r.statistic - 16.0 * 3.5 * 3.5).abs() < 1e-9);
        let g = GFunction::monomial(4).unwrap();
        assert!(matches!(md_statistic(&g, &input, -1.0, &opts()), Err(Error::Infeasible(_))));
        let r = md_statistic(&g, &input, 16.0, &opts()).unwrap();
        assert!((r.minimizer[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn generic_path_matches_exact_path() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let a2 = a.clone();
        let g = GFunction::custom(
            "product-custom",
            DVector::zeros(2),
            std::sync::Arc::new(move |x: &DVector<f64>| linalg::quad_form(&a, x)),
            std::sync::Arc::new(|x: &DVector<f64>| DVector::from_row_slice(&[x[1], x[0]])),
            std::sync::Arc::new(move |_: &DVector<f64>| &a2 * 2.0),
        )
        .unwrap();
        let exact = GFunction::product();
        let input = EstimateInput::from_standard_errors_2d([1.2, -0.4], [1.0, 0.6], 0.4, 1.0, [0.0; 2]).unwrap();
        for &tau in &[-2.0, -0.5, 0.0, 0.3, 1.5] {
            let x = md_statistic(&exact, &input, tau, &opts()).unwrap();
            let y = md_statistic(&g, &input, tau, &opts()).unwrap();
            assert!(y.converged, "τ={tau}");
            assert!((x.statistic - y.statistic).abs() <= 1e-8 * (1.0 + x.statistic), "τ={tau}: {} vs {}", x.statistic, y.statistic);
        }
    }

    #[test]
    fn closed_form_examples() {
        let eye = DMatrix::identity(2, 2);
        assert!((mediation_closed_form([2.0, 3.0], &eye, 1.0, 0.0).unwrap().statistic - 4.0).abs() < 1e-15);
        let r = mediation_closed_form([1.0, 1.0], &eye, 1.0, 0.0).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-15 && r.branch_tie);
        let (s1, s2) = (0.199 / 3.140, 0.119 / 5.343);
        let sigma = DMatrix::from_row_slice(2, 2, &[s1 * s1, 0.0, 0.0, s2 * s2]);
        let r = mediation_closed_form([0.199, -0.119], &sigma, 1.0, 0.199 * -0.119).unwrap();
        assert!(r.statistic < 1e-16);
        let r = mediation_closed_form([0.199, -0.119], &sigma, 1.0, -0.024).unwrap();
        assert!(r.statistic < 1e-2);
        assert!(mediation_closed_form([1.0, 1.0], &(eye * -1.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_oracle_examples() {
        let g = GFunction::product();
        let grid = GridSpec::default();
        let v = md_statistic_grid_oracle(&g, &identity_input([2.0, 3.0]), 0.0, &grid).unwrap();
        assert!((v - 4.0).abs() <= 1e-3 * 5.0);
        let v = md_statistic_grid_oracle(&g, &identity_input([0.0, 0.0]), 0.0, &grid).unwrap();
        assert!(v.abs() < 1e-12);
        let q = GFunction::quadratic_form(DMatrix::identity(2, 2)).unwrap();
        let v = md_statistic_grid_oracle(&q, &identity_input([3.0, 0.0]), 1.0, &grid).unwrap();
        assert!((v - 4.0).abs() < 1e-6);
        let mono = GFunction::monomial(2).unwrap();
        let input1 = EstimateInput::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0, DVector::zeros(1)).unwrap();
        assert!(matches!(
            md_statistic_grid_oracle(&mono, &input1, 1.0, &grid),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn polynomial_roots() {
        // (x-1)(x+2)(x-3)(x+0.5)
        let mut r = real_roots(&[3.0, 3.5, -6.0, -1.5, 1.0]);
        r.sort_by(f64::total_cmp);
        let want = [-2.0, -0.5, 1.0, 3.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
    }
}

//! Confidence intervals for `g(θ)` by test inversion over `τ`.
//!
//! The MD acceptance region `{τ : T̂(τ) ≤ c}` is scanned on a uniform grid
//! around `g(θ̂)` and every accept/reject switch is refined by bisection.

use rayon::prelude::*;

use crate::critval::{self, Bn2Config, HGrid, Method};
use crate::dist;
use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::input::EstimateInput;
use crate::mdstat::{MdSolver, SolverOptions};
use crate::rng::RngStream;
use crate::stats;

/// Record of the τ scan behind an interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TauGrid {
    pub points: usize,
    pub bracket: (f64, f64),
    pub endpoint_tol: f64,
    /// Times the bracket was doubled because an edge was accepted.
    pub expansions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceInterval {
    pub method: Method,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    /// Rejected sub-intervals strictly inside `[lower, upper]`.
    pub acceptance_gaps: Vec<(f64, f64)>,
    pub tau_grid: TauGrid,
    pub critical_value: Option<f64>,
    /// Scanned τ where the BN1 sufficient conditions fail.
    pub eligibility_holes: Vec<f64>,
    pub flags: Vec<String>,
}

impl ConfidenceInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.lower
            && tau <= self.upper
            && !self.acceptance_gaps.iter().any(|(a, b)| tau > *a && tau < *b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertConfig {
    pub scan_points: usize,
    /// `None` means `1e-4·(1 + |g(θ̂)|)`.
    pub endpoint_tol: Option<f64>,
    /// First-step level for BN1 eligibility and BN2; `None` means `α/10`.
    pub eta: Option<f64>,
    pub seed: RngStream,
    pub bn2_draws: usize,
    pub h_grid: Option<HGrid>,
    pub boot_draws: usize,
    pub max_expansions: usize,
    pub check_eligibility: bool,
    pub solver: SolverOptions,
}

impl Default for InvertConfig {
    fn default() -> Self {
        Self {
            scan_points: 400,
            endpoint_tol: None,
            eta: None,
            seed: RngStream::new(20240229),
            bn2_draws: 2000,
            h_grid: None,
            boot_draws: 1000,
            max_expansions: 20,
            check_eligibility: true,
            solver: SolverOptions::default(),
        }
    }
}

impl InvertConfig {
    pub fn eta_for(&self, alpha: f64) -> f64 {
        self.eta.unwrap_or(alpha / 10.0)
    }

    pub fn bn2_config(&self, alpha: f64, d: usize) -> Bn2Config {
        let mut cfg = Bn2Config::new(alpha, d, self.seed);
        cfg.eta = self.eta_for(alpha);
        cfg.b_draws = self.bn2_draws;
        if let Some(grid) = self.h_grid {
            cfg.h_grid = grid;
        }
        cfg
    }
}

/// Invert the test named by `method` at level `1-α`.
pub fn invert_test(
    g: &GFunction,
    input: &EstimateInput,
    method: Method,
    alpha: f64,
    cfg: &InvertConfig,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("α = {alpha} outside (0, 1)")));
    }
    match method {
        Method::Bn1 => {
            let crit = dist::chi2_quantile(1, 1.0 - alpha)?;
            let mut ci = invert_md(g, input, crit, Method::Bn1, alpha, cfg)?;
            if cfg.check_eligibility {
                if input.dim() == 2 {
                    let eta = cfg.eta_for(alpha);
                    let scanned = scan_taus(ci.tau_grid.bracket, ci.tau_grid.points);
                    for tau in scanned {
                        let e = critval::bn1_check(g, input, tau, alpha, eta)?;
                        if !e.eligible {
                            ci.eligibility_holes.push(tau);
                        }
                    }
                    if !ci.eligibility_holes.is_empty() {
                        ci.flags.push(format!("bn1_ineligible_at_{}_tau", ci.eligibility_holes.len()));
                    }
                } else {
                    ci.flags.push("bn1_eligibility_unchecked".into());
                }
            }
            Ok(ci)
        }
        Method::Bn2 => {
            let cv = critval::bn2_critical_value(g, input, &cfg.bn2_config(alpha, input.dim()))?;
            invert_md(g, input, cv.value, Method::Bn2, alpha, cfg)
        }
        Method::Projection => {
            let crit = critval::projection_critical_value(input.dim(), alpha)?.value;
            invert_md(g, input, crit, Method::Projection, alpha, cfg)
        }
        Method::Wald => wald_interval(g, input, alpha),
        Method::NaiveBoot => critval::naive_bootstrap_interval(g, input, alpha, cfg.boot_draws, cfg.seed),
        Method::Am => Err(Error::NotImplemented("AM interval".into())),
    }
}

/// Closed-form delta-method interval `g(θ̂) ± √(Q(χ²₁,1-α) ∇g'Σ̂∇g) / r_n`.
pub fn wald_interval(g: &GFunction, input: &EstimateInput, alpha: f64) -> Result<ConfidenceInterval> {
    let center = g.eval(input.theta_hat());
    let (_, var) = critval::wald_statistic(g, input, center)?;
    let crit = dist::chi2_quantile(1, 1.0 - alpha)?;
    let half = (crit * var).sqrt() / input.r_n();
    Ok(ConfidenceInterval {
        method: Method::Wald,
        level: 1.0 - alpha,
        lower: center - half,
        upper: center + half,
        acceptance_gaps: Vec::new(),
        tau_grid: TauGrid::default(),
        critical_value: Some(crit),
        eligibility_holes: Vec::new(),
        flags: Vec::new(),
    })
}

fn scan_taus(bracket: (f64, f64), m: usize) -> Vec<f64> {
    let (lo, hi) = bracket;
    (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
}

/// Invert the MD test `T̂(τ) ≤ crit`.
pub fn invert_md(
    g: &GFunction,
    input: &EstimateInput,
    crit: f64,
    method: Method,
    alpha: f64,
    cfg: &InvertConfig,
) -> Result<ConfidenceInterval> {
    if !(crit >= 0.0 && crit.is_finite()) {
        return Err(Error::domain(format!("critical value {crit} must be finite and nonnegative")));
    }
    if cfg.scan_points < 3 {
        return Err(Error::domain("need at least 3 scan points"));
    }
    let solver = MdSolver::new(g, input, cfg.solver)?;
    let center = g.eval(input.theta_hat());
    let endpoint_tol = cfg.endpoint_tol.unwrap_or(1e-4 * (1.0 + center.abs()));

    let wald_width = match critval::wald_statistic(g, input, center) {
        Ok((_, var)) => 2.0 * (dist::chi2_quantile(1, 1.0 - alpha)? * var).sqrt() / input.r_n(),
        Err(_) => 0.0,
    };
    let floor = 8.0 * input.sigma_eigen().max_value() / input.r_n().powi(2);
    let mut half = 0.5 * (6.0 * wald_width).max(floor);

    let accept = |tau: f64| -> Result<bool> { Ok(solver.statistic(tau)? <= crit) };
    let mut flags = Vec::new();
    let mut expansions = 0;
    let (taus, accepted) = loop {
        let bracket = (center - half, center + half);
        let taus = scan_taus(bracket, cfg.scan_points);
        let accepted: Vec<bool> = taus.par_iter().map(|t| accept(*t)).collect::<Result<_>>()?;
        let edge = accepted[0] || accepted[accepted.len() - 1];
        if !edge || expansions >= cfg.max_expansions {
            if edge {
                flags.push("acceptance_region_reaches_bracket".to_string());
            }
            break (taus, accepted);
        }
        half *= 2.0;
        expansions += 1;
    };
    if !accepted.iter().any(|a| *a) && !accept(center)? {
        return Err(Error::Internal("no τ accepted, not even g(θ̂)".into()));
    }

    let refine = |mut a: f64, mut b: f64, a_accepted: bool| -> Result<f64> {
        // Invariant: a has status a_accepted, b the opposite.
        while (b - a).abs() > endpoint_tol {
            let mid = 0.5 * (a + b);
            if accept(mid)? == a_accepted {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    };

    // Accepted runs on the grid, with g(θ̂) treated as an accepted point.
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut start: Option<f64> = None;
    for k in 0..taus.len() {
        if accepted[k] {
            if start.is_none() {
                start = Some(if k == 0 { taus[0] } else { refine(taus[k], taus[k - 1], true)? });
            }
            let closes = k + 1 == taus.len() || !accepted[k + 1];
            if closes {
                let end = if k + 1 == taus.len() { taus[k] } else { refine(taus[k], taus[k + 1], true)? };
                runs.push((start.take().unwrap(), end));
            }
        }
    }
    if !runs.iter().any(|(a, b)| center >= *a && center <= *b) {
        // The plug-in value sits in a run narrower than the grid spacing.
        let step = taus[1] - taus[0];
        let k = ((center - taus[0]) / step).floor() as usize;
        let left = refine(center, taus[k.min(taus.len() - 1)], true)?;
        let right = refine(center, taus[(k + 1).min(taus.len() - 1)], true)?;
        runs.push((left.min(center), right.max(center)));
        runs.sort_by(|a, b| a.0.total_cmp(&b.0));
        flags.push("plug_in_run_below_grid_resolution".into());
    }

    let lower = runs[0].0;
    let upper = runs[runs.len() - 1].1;
    let acceptance_gaps: Vec<(f64, f64)> = runs.windows(2).map(|w| (w[0].1, w[1].0)).filter(|(a, b)| b > a).collect();
    if !acceptance_gaps.is_empty() {
        flags.push("non_interval_acceptance_region".into());
    }
    Ok(ConfidenceInterval {
        method,
        level: 1.0 - alpha,
        lower,
        upper,
        acceptance_gaps,
        tau_grid: TauGrid {
            points: cfg.scan_points,
            bracket: (taus[0], taus[taus.len() - 1]),
            endpoint_tol,
            expansions,
        },
        critical_value: Some(crit),
        eligibility_holes: Vec::new(),
        flags,
    })
}

/// Lower median of the interval lengths.
pub fn ci_median_length(cis: &[ConfidenceInterval]) -> Result<f64> {
    let lengths: Vec<f64> = cis.iter().map(|c| c.length()).collect();
    stats::lower_median(&lengths)
}

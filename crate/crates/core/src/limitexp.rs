//! Gaussian shift limit experiment `Z ~ N(h, Γ⁻¹)` around `θ⋆`.
//!
//! The plug-in estimator of `g` has limit `h'HW + ½W'HW` with
//! `W ~ N(0, Γ⁻¹)`, whose law moves with `h` (non-regularity). Local power
//! curves of tests that are similar on `H⋆` have zero directional derivative
//! along `H⋆` at the origin; the demos estimate both effects by simulation.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dist;
use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::linalg;
use crate::rng::RngStream;
use crate::stats;

const BLOCK: usize = 1 << 14;

#[derive(Debug, Clone)]
pub struct ShiftExperiment {
    gamma_inv: DMatrix<f64>,
    hessian: DMatrix<f64>,
    h: DVector<f64>,
    chol: DMatrix<f64>,
}

impl ShiftExperiment {
    pub fn new(gamma_inv: DMatrix<f64>, g: &GFunction, h: DVector<f64>) -> Result<Self> {
        let d = g.dim();
        if gamma_inv.nrows() != d || gamma_inv.ncols() != d || h.len() != d {
            return Err(Error::domain(format!(
                "dimension mismatch: g has d = {d}, gamma_inv is {}x{}, h has {}",
                gamma_inv.nrows(),
                gamma_inv.ncols(),
                h.len()
            )));
        }
        let chol = linalg::cholesky_lower(&gamma_inv)?;
        Ok(Self {
            gamma_inv,
            hessian: g.hessian_at_star(),
            h,
            chol,
        })
    }

    pub fn gamma_inv(&self) -> &DMatrix<f64> {
        &self.gamma_inv
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    /// Samples of `h'HW + ½W'HW`, the limit of `r²ₙ(g(θ̂) - g(θ_{n,h}))`.
    pub fn plug_in_limit_sample(&self, n_draws: usize, seed: RngStream) -> Result<Vec<f64>> {
        if n_draws < 10_000 {
            return Err(Error::domain(format!("n_draws = {n_draws} below 10000")));
        }
        let hh = &self.hessian * &self.h;
        let blocks: Vec<Vec<f64>> = (0..n_draws.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let len = BLOCK.min(n_draws - b * BLOCK);
                let mut rng = seed.substream(b as u64).rng();
                (0..len)
                    .map(|_| {
                        let w = draw(&self.chol, &mut rng);
                        hh.dot(&w) + 0.5 * w.dot(&(&self.hessian * &w))
                    })
                    .collect()
            })
            .collect();
        Ok(blocks.concat())
    }
}

fn draw(chol: &DMatrix<f64>, rng: &mut impl rand::Rng) -> DVector<f64> {
    let e = DVector::from_fn(chol.nrows(), |_, _| StandardNormal.sample(rng));
    chol * e
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub h: DVector<f64>,
    pub power: f64,
    pub se: f64,
}

/// Rejection rates of `test(Z)` with `Z = h + W`, `W ~ N(0, Γ⁻¹)`. All `h`
/// share the same draws of `W`.
pub fn power_curve<F>(
    test: F,
    gamma_inv: &DMatrix<f64>,
    h_list: &[DVector<f64>],
    n_draws: usize,
    seed: RngStream,
) -> Result<Vec<PowerPoint>>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    if n_draws == 0 {
        return Err(Error::domain("power curve needs draws"));
    }
    let chol = linalg::cholesky_lower(gamma_inv)?;
    if let Some(h) = h_list.iter().find(|h| h.len() != chol.nrows()) {
        return Err(Error::domain(format!("shift of length {} for d = {}", h.len(), chol.nrows())));
    }
    let counts = (0..n_draws.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let len = BLOCK.min(n_draws - b * BLOCK);
            let mut rng = seed.substream(b as u64).rng();
            let mut counts = vec![0usize; h_list.len()];
            for _ in 0..len {
                let w = draw(&chol, &mut rng);
                for (k, h) in h_list.iter().enumerate() {
                    if test((h + &w).as_slice()) {
                        counts[k] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0usize; h_list.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(h_list
        .iter()
        .zip(counts)
        .map(|(h, k)| {
            let power = k as f64 / n_draws as f64;
            PowerPoint {
                h: h.clone(),
                power,
                se: stats::binomial_se(power, n_draws),
            }
        })
        .collect())
}

/// Finite-difference slopes of the power curve at `base` along `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slope {
    /// `(P(base + εu) - P(base)) / ε`.
    pub forward: f64,
    pub forward_se: f64,
    /// `(P(base + εu) - P(base - εu)) / 2ε`.
    pub central: f64,
    pub central_se: f64,
}

pub fn directional_slope<F>(
    test: F,
    gamma_inv: &DMatrix<f64>,
    base: &DVector<f64>,
    direction: &DVector<f64>,
    eps: f64,
    n_draws: usize,
    seed: RngStream,
) -> Result<Slope>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    if !(eps > 0.0) || n_draws < 2 {
        return Err(Error::domain("slope needs eps > 0 and at least two draws"));
    }
    let chol = linalg::cholesky_lower(gamma_inv)?;
    if base.len() != chol.nrows() || direction.len() != chol.nrows() {
        return Err(Error::domain("base and direction must match the dimension of gamma_inv"));
    }
    let plus = base + direction * eps;
    let minus = base - direction * eps;
    // Per-draw differences of rejection indicators: sums of d and |d|.
    let [fs, fa, cs, ca] = (0..n_draws.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let len = BLOCK.min(n_draws - b * BLOCK);
            let mut rng = seed.substream(b as u64).rng();
            let mut acc = [0i64; 4];
            for _ in 0..len {
                let w = draw(&chol, &mut rng);
                let r0 = test((base + &w).as_slice()) as i64;
                let rp = test((&plus + &w).as_slice()) as i64;
                let rm = test((&minus + &w).as_slice()) as i64;
                acc[0] += rp - r0;
                acc[1] += (rp - r0).abs();
                acc[2] += rp - rm;
                acc[3] += (rp - rm).abs();
            }
            acc
        })
        .reduce(|| [0i64; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
    let n = n_draws as f64;
    let mean_se = |s: i64, a: i64| {
        let m = s as f64 / n;
        let var = (a as f64 / n - m * m).max(0.0) * n / (n - 1.0);
        (m, (var / n).sqrt())
    };
    let (fm, fse) = mean_se(fs, fa);
    let (cm, cse) = mean_se(cs, ca);
    Ok(Slope {
        forward: fm / eps,
        forward_se: fse / eps,
        central: cm / (2.0 * eps),
        central_se: cse / (2.0 * eps),
    })
}

/// Test of `H₀: θ₁θ₂ = 0` rejecting when `min(|Z₁|, |Z₂|)² > Q(χ²₁, 1-α)`,
/// the MD test for the product at `τ = 0` with `Γ⁻¹ = I`.
pub fn similar_product_test(alpha: f64) -> Result<impl Fn(&[f64]) -> bool + Sync + Copy> {
    let crit = dist::chi2_quantile(1, 1.0 - alpha)?;
    Ok(move |z: &[f64]| {
        let m = z[0].abs().min(z[1].abs());
        m * m > crit
    })
}

#[derive(Debug, Clone)]
pub struct SlopeRow {
    pub label: String,
    pub base: DVector<f64>,
    pub direction: DVector<f64>,
    pub slope: Slope,
}

/// Slopes of the product test at the origin along both axes (inside `H⋆`)
/// and along the diagonal at `‖h‖ = 2` (off the cone).
pub fn flatness_demo(alpha: f64, n_draws: usize, eps: f64, seed: RngStream) -> Result<Vec<SlopeRow>> {
    let test = similar_product_test(alpha)?;
    let eye = DMatrix::identity(2, 2);
    let diag = DVector::from_vec(vec![1.0, 1.0]) / 2.0f64.sqrt();
    let cases = [
        ("e1 at 0", DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0])),
        ("e2 at 0", DVector::zeros(2), DVector::from_vec(vec![0.0, 1.0])),
        ("(1,1)/sqrt2 at |h|=2", &diag * 2.0, diag.clone()),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (label, base, direction))| {
            let slope = directional_slope(test, &eye, &base, &direction, eps, n_draws, seed.substream(k as u64))?;
            Ok(SlopeRow {
                label: label.to_string(),
                base,
                direction,
                slope,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonRegularity {
    pub ks: f64,
    pub h_a: [f64; 2],
    pub h_b: [f64; 2],
    pub n_draws: usize,
}

/// KS distance between plug-in limit laws of the product at two shifts.
pub fn nonregularity_demo(n_draws: usize, seed: RngStream) -> Result<NonRegularity> {
    let g = GFunction::product();
    let (h_a, h_b) = ([1.0, 0.0], [3.0, 0.0]);
    let sample = |h: [f64; 2], key: u64| {
        ShiftExperiment::new(DMatrix::identity(2, 2), &g, DVector::from_row_slice(&h))?
            .plug_in_limit_sample(n_draws, seed.substream(key))
    };
    let a = sample(h_a, 0)?;
    let b = sample(h_b, 1)?;
    Ok(NonRegularity {
        ks: stats::ks_distance(&a, &b)?,
        h_a,
        h_b,
        n_draws,
    })
}

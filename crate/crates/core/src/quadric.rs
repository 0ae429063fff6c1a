//! Nearest point on a quadric level set in whitened, diagonalized coordinates:
//!
//! ```text
//!     minimize ‖v̂ - v‖²   subject to   Σᵢ λᵢ vᵢ² = target
//! ```
//!
//! Stationary points satisfy `vᵢ = v̂ᵢ / (1 + μλᵢ)`. The global minimizer is
//! the one with `1 + μλᵢ ≥ 0` for every `i`, so `μ` is the unique root of the
//! decreasing secular function
//!
//! ```text
//!     f(μ) = Σᵢ λᵢ v̂ᵢ² / (1 + μλᵢ)² - target
//! ```
//!
//! on the interval between the poles `-1/λ_max` and `-1/λ_min`. When `f` has
//! no root there (`v̂` orthogonal to an extreme eigenspace) the solution sits
//! on the pole and the free component along that eigenspace is set by the
//! constraint; its sign is arbitrary, which is exactly the two-branch tie.

/// Which extreme eigenspace a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadricSolution {
    /// `‖v̂ - v‖²` at the minimizer.
    pub stat: f64,
    pub mu: f64,
    /// The minimizer sits on a pole (degenerate secular equation).
    pub hard_case: Option<Extreme>,
    /// Increase in the objective when the components in the top / bottom
    /// extreme eigenspace are reflected. Reflection keeps feasibility, so a
    /// near-zero increase with nonzero components signals a tie between the
    /// two branches.
    pub mirror_gap: [f64; 2],
    /// Norm of the top / bottom extreme eigenspace components of `v`.
    pub extreme_norm: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infeasible;

/// A quadric `Σ λᵢ vᵢ² = target` with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct DiagonalQuadric {
    lambda: Vec<f64>,
    scale: f64,
    top_end: usize,
    bottom_start: usize,
}

impl DiagonalQuadric {
    pub fn new(mut lambda: Vec<f64>) -> Self {
        let scale = lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        for l in lambda.iter_mut() {
            if l.abs() <= 1e-14 * scale {
                *l = 0.0;
            }
        }
        debug_assert!(lambda.windows(2).all(|w| w[0] >= w[1]));
        let n = lambda.len();
        let max = lambda[0];
        let min = lambda[n - 1];
        let top_end = if max > 0.0 {
            lambda.iter().take_while(|l| **l >= max - 1e-12 * max.abs()).count()
        } else {
            0
        };
        let bottom_start = if min < 0.0 {
            n - lambda.iter().rev().take_while(|l| **l <= min + 1e-12 * min.abs()).count()
        } else {
            n
        };
        Self {
            lambda,
            scale,
            top_end,
            bottom_start,
        }
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Index range of the top / bottom extreme eigenspace.
    pub fn extreme_range(&self, which: Extreme) -> std::ops::Range<usize> {
        match which {
            Extreme::Top => 0..self.top_end,
            Extreme::Bottom => self.bottom_start..self.lambda.len(),
        }
    }

    /// Solve for the minimizer, writing it into `v`.
    pub fn solve(&self, vhat: &[f64], target: f64, v: &mut [f64]) -> Result<QuadricSolution, Infeasible> {
        let n = self.lambda.len();
        debug_assert_eq!(vhat.len(), n);
        debug_assert_eq!(v.len(), n);
        let lam = &self.lambda;
        let lmax = lam[0];
        let lmin = lam[n - 1];
        if self.scale == 0.0 {
            return if target == 0.0 {
                v.copy_from_slice(vhat);
                Ok(QuadricSolution {
                    stat: 0.0,
                    mu: 0.0,
                    hard_case: None,
                    mirror_gap: [f64::INFINITY; 2],
                    extreme_norm: [0.0; 2],
                })
            } else {
                Err(Infeasible)
            };
        }
        if (target > 0.0 && lmax <= 0.0) || (target < 0.0 && lmin >= 0.0) {
            return Err(Infeasible);
        }

        let vnorm = vhat.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vtol = 1e-13 * (vnorm + (target.abs() / self.scale).sqrt());
        let top = 0..self.top_end;
        let bottom = self.bottom_start..n;
        let top_active = top.clone().any(|i| vhat[i].abs() > vtol);
        let bottom_active = bottom.clone().any(|i| vhat[i].abs() > vtol);

        // f with the given index range dropped (used at the poles).
        let f_excluding = |mu: f64, skip: &std::ops::Range<usize>| -> f64 {
            let mut s = -target;
            for i in 0..n {
                if skip.contains(&i) || lam[i] == 0.0 {
                    continue;
                }
                let den = 1.0 + mu * lam[i];
                s += lam[i] * vhat[i] * vhat[i] / (den * den);
            }
            s
        };

        let mu_lo = if lmax > 0.0 { -1.0 / lmax } else { f64::NEG_INFINITY };
        let mu_hi = if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY };

        let f_lo = if top_active {
            f64::INFINITY
        } else if mu_lo.is_finite() {
            f_excluding(mu_lo, &top)
        } else {
            -target
        };
        let f_hi = if bottom_active {
            f64::NEG_INFINITY
        } else if mu_hi.is_finite() {
            f_excluding(mu_hi, &bottom)
        } else {
            -target
        };

        let (mu, hard_case) = if f_lo <= 0.0 {
            // Root at (or below) the lower pole: free component in the top eigenspace.
            (mu_lo, Some(Extreme::Top))
        } else if f_hi >= 0.0 {
            (mu_hi, Some(Extreme::Bottom))
        } else {
            (self.find_root(vhat, target, mu_lo, mu_hi), None)
        };

        match hard_case {
            Some(Extreme::Top) => {
                let free_sq = if mu_lo.is_finite() { (-f_lo / lmax).max(0.0) } else { 0.0 };
                self.fill_pole(vhat, mu_lo, &top, free_sq, v);
            }
            Some(Extreme::Bottom) => {
                if mu_hi.is_finite() {
                    let free_sq = (f_hi / -lmin).max(0.0);
                    self.fill_pole(vhat, mu_hi, &bottom, free_sq, v);
                } else {
                    // target = 0 with λ ≥ 0: the origin of the positive directions.
                    for i in 0..n {
                        v[i] = if lam[i] == 0.0 { vhat[i] } else { 0.0 };
                    }
                }
            }
            None => {
                for i in 0..n {
                    v[i] = vhat[i] / (1.0 + mu * lam[i]);
                }
            }
        }

        let mut stat = 0.0;
        for i in 0..n {
            let d = vhat[i] - v[i];
            stat += d * d;
        }
        let mut mirror_gap = [f64::INFINITY; 2];
        let mut extreme_norm = [0.0; 2];
        for (k, range) in [top, bottom].into_iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let mut gap = 0.0;
            let mut norm = 0.0;
            for i in range {
                gap += 4.0 * vhat[i] * v[i];
                norm += v[i] * v[i];
            }
            mirror_gap[k] = gap;
            extreme_norm[k] = norm.sqrt();
        }
        Ok(QuadricSolution {
            stat,
            mu,
            hard_case,
            mirror_gap,
            extreme_norm,
        })
    }

    /// Cheap upper bound on the statistic: squared distance to the nearest
    /// point of the quadric on the line through `v̂` along the gradient of
    /// `Σ λᵢ vᵢ²`. `+∞` when that line misses the quadric.
    pub fn upper_bound(&self, vhat: &[f64], target: f64) -> f64 {
        let (mut a, mut b, mut q, mut ee) = (0.0, 0.0, -target, 0.0);
        for (l, x) in self.lambda.iter().zip(vhat) {
            let e = l * x;
            a += l * e * e;
            b += e * e;
            q += l * x * x;
            ee += e * e;
        }
        // a s² + 2 b s + q = 0, with b = ‖e‖² here since e = Λv̂.
        let s = if a == 0.0 {
            if b == 0.0 {
                return f64::INFINITY;
            }
            -q / (2.0 * b)
        } else {
            let disc = b * b - a * q;
            if disc < 0.0 {
                return f64::INFINITY;
            }
            let r = disc.sqrt();
            // Numerically stable smaller-magnitude root.
            let big = -(b + b.signum() * r);
            if big == 0.0 {
                0.0
            } else {
                q / big
            }
        };
        s * s * ee
    }

    /// Statistic only, using a stack buffer when the dimension allows it.
    pub fn solve_stat(&self, vhat: &[f64], target: f64) -> Result<f64, Infeasible> {
        let n = self.lambda.len();
        if n <= 8 {
            let mut buf = [0.0; 8];
            self.solve(vhat, target, &mut buf[..n]).map(|s| s.stat)
        } else {
            let mut buf = vec![0.0; n];
            self.solve(vhat, target, &mut buf).map(|s| s.stat)
        }
    }

    fn fill_pole(&self, vhat: &[f64], mu: f64, group: &std::ops::Range<usize>, free_sq: f64, v: &mut [f64]) {
        for i in 0..self.lambda.len() {
            if group.contains(&i) {
                v[i] = 0.0;
            } else {
                v[i] = vhat[i] / (1.0 + mu * self.lambda[i]);
            }
        }
        // Put the free mass on the first direction of the eigenspace (positive sign);
        // its reflection is an equally good minimizer.
        v[group.start] = free_sq.sqrt();
    }

    /// `f(μ)`, `f'(μ)` and `Σ|terms|` (the scale for the convergence test).
    fn secular(&self, vhat: &[f64], target: f64, mu: f64) -> (f64, f64, f64) {
        let mut f = -target;
        let mut df = 0.0;
        let mut mag = target.abs();
        for (l, x) in self.lambda.iter().zip(vhat) {
            if *l == 0.0 {
                continue;
            }
            let den = 1.0 + mu * l;
            let t = l * x * x / (den * den);
            f += t;
            mag += t.abs();
            df -= 2.0 * t * l / den;
        }
        (f, df, mag)
    }

    /// Root of the decreasing secular function on `(mu_lo, mu_hi)`.
    fn find_root(&self, vhat: &[f64], target: f64, mu_lo: f64, mu_hi: f64) -> f64 {
        let (f0, df0, _) = self.secular(vhat, target, 0.0);
        if f0 == 0.0 {
            return 0.0;
        }
        let unit = 1.0 / self.scale;
        // Finite bracket [a, b] with f(a) > 0 > f(b).
        let (mut a, mut b) = if f0 > 0.0 { (0.0, mu_hi) } else { (mu_lo, 0.0) };
        if !b.is_finite() {
            let mut step = unit;
            loop {
                if self.secular(vhat, target, step).0 < 0.0 {
                    b = step;
                    break;
                }
                a = step;
                step *= 4.0;
                if step > 1e300 {
                    return step;
                }
            }
        }
        if !a.is_finite() {
            let mut step = -unit;
            loop {
                if self.secular(vhat, target, step).0 > 0.0 {
                    a = step;
                    break;
                }
                b = step;
                step *= 4.0;
                if step < -1e300 {
                    return step;
                }
            }
        }

        let first = -f0 / df0;
        let mut mu = if df0 < 0.0 && first > a && first < b { first } else { 0.5 * (a + b) };
        for _ in 0..200 {
            let (f, df, mag) = self.secular(vhat, target, mu);
            if f.abs() <= 4.0 * f64::EPSILON * mag || f.is_nan() {
                break;
            }
            if f > 0.0 {
                a = mu;
            } else {
                b = mu;
            }
            let newton = mu - f / df;
            let next = if df < 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - mu).abs() <= 2.0 * f64::EPSILON * (next.abs() + unit) || b - a <= 2.0 * f64::EPSILON * (b.abs() + unit) {
                mu = next;
                break;
            }
            mu = next;
        }
        mu
    }
}

//! χ² and standard normal distribution functions.
//!
//! Everything here is built on the regularized incomplete gamma functions
//! `P(a, x)` and `Q(a, x) = 1 - P(a, x)`, evaluated by the power series for
//! `x < a + 1` and by a Lentz continued fraction otherwise.

use crate::error::{Error, Result};

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 1000;

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

pub fn chi2_cdf(df: u32, x: f64) -> f64 {
    gamma_p(0.5 * df as f64, 0.5 * x)
}

pub fn chi2_sf(df: u32, x: f64) -> f64 {
    gamma_q(0.5 * df as f64, 0.5 * x)
}

pub fn chi2_pdf(df: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return if df == 2 { 0.5 } else { 0.0 };
    }
    let k = 0.5 * df as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(())
}

/// The `p`-quantile of the χ² distribution with `df` degrees of freedom.
///
/// Newton iterations on `P(df/2, x/2) - p` from a Wilson–Hilferty start,
/// falling back to bisection whenever a step leaves the current bracket.
pub fn chi2_quantile(df: u32, p: f64) -> Result<f64> {
    check_probability(p)?;
    if df == 0 {
        return Err(Error::domain("χ² degrees of freedom must be positive"));
    }
    let k = df as f64;
    let z = normal_quantile(p)?;
    let wh = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    let mut x = (k * wh * wh * wh).max(1e-8);

    // Bracket [lo, hi] with cdf(lo) <= p <= cdf(hi).
    let mut lo = 0.0;
    let mut hi = x.max(1.0);
    while chi2_cdf(df, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let f = chi2_cdf(df, x) - p;
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let pdf = chi2_pdf(df, x);
        let mut next = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    let tail = 0.5 * gamma_q(0.5, 0.5 * x * x);
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation refined by
/// one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    let x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn chi2_two_df_is_exponential() {
        for &x in &[0.1, 1.0, 3.0, 12.0] {
            let exact = 1.0 - (-x / 2.0f64).exp();
            assert!((chi2_cdf(2, x) - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(chi2_quantile(1, 0.0).is_err());
        assert!(chi2_quantile(1, 1.0).is_err());
        assert!(chi2_quantile(1, f64::NAN).is_err());
        assert!(normal_quantile(1.5).is_err());
    }

    #[test]
    fn normal_quantile_matches_cdf() {
        for &p in &[1e-10, 0.001, 0.025, 0.3, 0.5, 0.975, 1.0 - 1e-9] {
            let x = normal_quantile(p).unwrap();
            let tail = p.min(1.0 - p);
            assert!((normal_cdf(x) - p).abs() <= 1e-12 * tail + 1e-16, "p={p}");
        }
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn chi2_quantile_is_monotone() {
        let mut prev = 0.0;
        for i in 1..100 {
            let q = chi2_quantile(3, i as f64 / 100.0).unwrap();
            assert!(q > prev);
            prev = q;
        }
    }
}

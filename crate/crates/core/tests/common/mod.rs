#![allow(dead_code)]

use mdci::{EstimateInput, GFunction};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random SPD 2x2 matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DMatrix<f64> {
    let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (a.cos(), a.sin());
    let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let l = DMatrix::from_diagonal(&DVector::from_vec(vec![rng.random_range(lo..hi), rng.random_range(lo..hi)]));
    let m = &q * l * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Product or a random symmetric quadratic form.
pub fn random_g(rng: &mut ChaCha8Rng) -> GFunction {
    if rng.random_bool(0.5) {
        GFunction::product()
    } else {
        let b: f64 = rng.random_range(-1.0..1.0);
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[rng.random_range(-1.0..1.0), b, b, rng.random_range(-1.0..1.0)],
        );
        GFunction::quadratic_form(m).unwrap()
    }
}

pub fn input(theta_hat: [f64; 2], sigma: DMatrix<f64>) -> EstimateInput {
    EstimateInput::new(DVector::from_row_slice(&theta_hat), sigma, 1.0, DVector::zeros(2)).unwrap()
}

/// Reported mediation estimates and t-statistics, zero correlation.
pub const MEDIATION: [(&str, [f64; 2], [f64; 2]); 4] = [
    ("full sample", [0.199, -0.119], [3.140, -5.343]),
    ("1 year", [0.256, -0.097], [2.052, -1.941]),
    ("2-3 years", [0.109, -0.125], [1.065, -4.163]),
    ("4 years", [0.064, -0.113], [0.513, -1.931]),
];

pub fn mediation_input(theta_hat: [f64; 2], t: [f64; 2]) -> EstimateInput {
    let se = [(theta_hat[0] / t[0]).abs(), (theta_hat[1] / t[1]).abs()];
    EstimateInput::from_standard_errors_2d(theta_hat, se, 0.0, 1.0, [0.0, 0.0]).unwrap()
}

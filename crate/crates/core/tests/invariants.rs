mod common;

use common::{input, mediation_input, random_g, random_spd, MEDIATION};
use mdci::critval::{bn1_check, wald_statistic};
use mdci::geometry::HyperbolaGeometry;
use mdci::gfunc::{diagnostics, finite_difference_gradient, hstar_contains, Definiteness};
use mdci::invert::{invert_test, InvertConfig};
use mdci::limitexp::ShiftExperiment;
use mdci::mc::{run_design, MCDesign};
use mdci::mdstat::{md_statistic, md_statistic_grid_oracle, GridSpec, SolverOptions};
use mdci::{dist, linalg, stats, EstimateInput, GFunction, Method, RngStream};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fast_cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(fast_cases(64))]

    #[test]
    fn chi2_quantile_inverts_cdf(x in 0.1f64..10.0, df in prop::sample::select(vec![1u32, 2, 5])) {
        let back = dist::chi2_quantile(df, dist::chi2_cdf(df, x)).unwrap();
        prop_assert!((back - x).abs() <= 1e-6 * x);
    }

    #[test]
    fn spd_has_positive_spectrum(seed in any::<u64>()) {
        let m = random_spd(&mut ChaCha8Rng::seed_from_u64(seed), 1e-3, 50.0);
        let eig = linalg::sym_eig(&m).unwrap();
        prop_assert!(eig.min_value() > 0.0);
        prop_assert!(linalg::matrix_sqrt_spd(&m).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
        let g = random_g(&mut ChaCha8Rng::seed_from_u64(seed));
        let th = DVector::from_vec(vec![t1, t2]);
        let grad = g.grad(&th);
        let fd = finite_difference_gradient(|x| g.eval(x), &th);
        prop_assert!((&grad - fd).norm() <= 1e-5 * (1.0 + grad.norm()));
    }

    #[test]
    fn hstar_is_a_cone(h1 in -3.0f64..3.0, scale in -10.0f64..10.0) {
        let g = GFunction::product();
        for h in [DVector::from_vec(vec![h1, 0.0]), DVector::from_vec(vec![0.0, h1]), DVector::from_vec(vec![h1, h1])] {
            if hstar_contains(&g, &h, 1e-9) {
                prop_assert!(hstar_contains(&g, &(h * scale), 1e-9));
            }
        }
    }

    #[test]
    fn diagnostics_flip_with_the_sign_of_tau(seed in any::<u64>(), delta in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_g(&mut rng);
        let inp = input([0.3, -0.2], random_spd(&mut rng, 0.5, 2.0));
        let up = diagnostics(&g, &inp, g.value_at_star() + delta).unwrap();
        let down = diagnostics(&g, &inp, g.value_at_star() - delta).unwrap();
        prop_assert!((up.lambda[0] + down.lambda[1]).abs() < 1e-12);
        prop_assert!((up.lambda[1] + down.lambda[0]).abs() < 1e-12);
        if up.definiteness == Definiteness::Indefinite && !up.equal_eigenvalues {
            prop_assert!((up.rho_p.unwrap() + down.rho_p.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn product_eigenvalues_have_closed_form(r in -0.95f64..0.95, tau in -2.0f64..2.0) {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
        let d = diagnostics(&GFunction::product(), &input([0.0, 0.0], sigma), tau).unwrap();
        let s = if tau < 0.0 { -1.0 } else { 1.0 };
        let mut want = [s * (r - 1.0), s * (r + 1.0)];
        want.sort_by(|a, b| b.total_cmp(a));
        prop_assert!((d.lambda[0] - want[0]).abs() < 1e-12 && (d.lambda[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn bn1_check_matches_product_closed_form(
        r in -0.9f64..0.9,
        s1 in 0.2f64..3.0,
        s2 in 0.2f64..3.0,
        tau in -2.0f64..2.0,
    ) {
        let inp = EstimateInput::from_standard_errors_2d([0.5, 0.5], [s1, s2], r, 1.0, [0.0, 0.0]).unwrap();
        let e = bn1_check(&GFunction::product(), &inp, tau, 0.05, 0.005).unwrap();
        let s = if tau < 0.0 { -1.0 } else { 1.0 };
        let mut want = [s * s1 * s2 * (r - 1.0), s * s1 * s2 * (r + 1.0)];
        want.sort_by(|a, b| b.total_cmp(a));
        prop_assert!((e.lambda[0] - want[0]).abs() < 1e-10 && (e.lambda[1] - want[1]).abs() < 1e-10);
        prop_assert!((e.rho_p - s * r).abs() < 1e-10);
        prop_assert_eq!(e.condition_p1, (0.0..=0.995).contains(&(s * r)));
    }

    #[test]
    fn wald_is_invariant_to_rescaling_g(seed in any::<u64>(), c in prop::sample::select(vec![-3.0, -0.5, 0.25, 7.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: f64 = rng.random_range(-1.0..1.0);
        let m = DMatrix::from_row_slice(2, 2, &[rng.random_range(-1.0..1.0), b, b, rng.random_range(-1.0..1.0)]);
        let inp = input([rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)], random_spd(&mut rng, 0.5, 2.0));
        let tau = rng.random_range(-2.0..2.0);
        let g = GFunction::quadratic_form(m.clone()).unwrap();
        let gc = GFunction::quadratic_form(m * c).unwrap();
        if let (Ok((w, _)), Ok((wc, _))) = (wald_statistic(&g, &inp, tau), wald_statistic(&gc, &inp, c * tau)) {
            prop_assert!((w - wc).abs() <= 1e-9 * (1.0 + w));
        }
    }

    #[test]
    fn boundary_points_sit_at_distance_c(rho in -0.9f64..0.9, tau in 0.01f64..30.0, x1 in -10.0f64..10.0) {
        let geom = HyperbolaGeometry::with_alpha(rho, tau, 0.05).unwrap();
        let lower = geom.boundary_lower(x1).unwrap();
        let foot = [x1, geom.x2_branch(x1)];
        prop_assert!(((lower[0] - foot[0]).hypot(lower[1] - foot[1]) - geom.c).abs() < 1e-8);
        prop_assert!(geom.dist_to_null(lower).distance <= geom.c + 1e-8);
        if let Ok(upper) = geom.boundary_upper(x1) {
            prop_assert!((geom.dist_to_null(upper).distance - geom.c).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(fast_cases(24))]

    #[test]
    fn md_statistic_agrees_with_grid_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_g(&mut rng);
        let th = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let inp = input(th, random_spd(&mut rng, 0.5, 2.0));
        let tau = g.eval(inp.theta_hat()) + rng.random_range(-1.0..1.0);
        let grid = md_statistic_grid_oracle(&g, &inp, tau, &GridSpec::default());
        let Ok(grid) = grid else { return Ok(()) };
        let md = md_statistic(&g, &inp, tau, &SolverOptions::default()).unwrap().statistic;
        prop_assert!(md <= grid + 1e-9 * (1.0 + grid));
        prop_assert!(md >= grid - 1e-3 * (1.0 + grid));
    }

    #[test]
    fn md_statistic_is_invariant_under_linear_maps(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: f64 = rng.random_range(-1.0..1.0);
        let m = DMatrix::from_row_slice(2, 2, &[rng.random_range(-1.0..1.0), b, b, rng.random_range(-1.0..1.0)]);
        let a = DMatrix::from_row_slice(2, 2, &[
            rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0),
        ]);
        let a_inv = a.clone().try_inverse().unwrap();
        let th = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let sigma = random_spd(&mut rng, 0.5, 2.0);
        let g = GFunction::quadratic_form(m.clone()).unwrap();
        let ga = GFunction::quadratic_form(a_inv.transpose() * &m * &a_inv).unwrap();
        let inp = EstimateInput::new(th.clone(), sigma.clone(), 1.0, DVector::zeros(2)).unwrap();
        let sa = &a * &sigma * a.transpose();
        let inp_a = EstimateInput::new(&a * th, (&sa + sa.transpose()) * 0.5, 1.0, DVector::zeros(2)).unwrap();
        let th0 = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let tau = g.eval(&th0);
        let opts = SolverOptions::default();
        let t = md_statistic(&g, &inp, tau, &opts).unwrap().statistic;
        let ta = md_statistic(&ga, &inp_a, tau, &opts).unwrap().statistic;
        prop_assert!((t - ta).abs() <= 1e-6 * (1.0 + t));
    }

    #[test]
    fn md_statistic_is_bounded_by_any_feasible_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_g(&mut rng);
        let inp = input([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], random_spd(&mut rng, 0.5, 2.0));
        let opts = SolverOptions::default();
        let at_hat = md_statistic(&g, &inp, g.eval(inp.theta_hat()), &opts).unwrap().statistic;
        prop_assert!(at_hat.abs() < 1e-12);
        let th0 = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let diff = inp.theta_hat() - &th0;
        let bound = linalg::quad_form(inp.sigma_inv(), &diff);
        let t = md_statistic(&g, &inp, g.eval(&th0), &opts).unwrap().statistic;
        prop_assert!(t <= bound * (1.0 + 1e-9) + 1e-12);
    }
}

fn bn2_cfg() -> InvertConfig {
    InvertConfig {
        seed: RngStream::new(7),
        ..InvertConfig::default()
    }
}

/// `[a, b] ⊆ [c, d]` up to `tol` on either end.
fn nested(inner: (f64, f64), outer: (f64, f64), tol: f64) -> bool {
    inner.0 >= outer.0 - tol && inner.1 <= outer.1 + tol
}

#[test]
fn md_intervals_nest_and_contain_the_plug_in() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut instances: Vec<EstimateInput> = MEDIATION.iter().map(|(_, th, t)| mediation_input(*th, *t)).collect();
    for _ in 0..50 {
        let th = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let se = [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)];
        instances.push(EstimateInput::from_standard_errors_2d(th, se, 0.0, 1.0, [0.0, 0.0]).unwrap());
    }
    let g = GFunction::product();
    let q1 = dist::chi2_quantile(1, 0.95).unwrap();
    let cfg = bn2_cfg();
    let mut checked = 0;
    for inp in &instances {
        let plug = g.eval(inp.theta_hat());
        let cis: Vec<_> = [Method::Bn1, Method::Bn2, Method::Projection, Method::Wald, Method::NaiveBoot]
            .into_iter()
            .map(|m| invert_test(&g, inp, m, 0.05, &cfg).unwrap())
            .collect();
        for ci in &cis {
            assert!(ci.lower <= plug && plug <= ci.upper, "{} misses g(θ̂) = {plug}", ci.method);
        }
        let tol = 2.0 * 1e-4 * (1.0 + plug.abs());
        let (bn1, bn2, proj) = (&cis[0], &cis[1], &cis[2]);
        assert!(nested((bn2.lower, bn2.upper), (proj.lower, proj.upper), tol));
        if bn1.eligibility_holes.is_empty() && bn2.critical_value.unwrap() >= q1 {
            assert!(nested((bn1.lower, bn1.upper), (bn2.lower, bn2.upper), tol));
            checked += 1;
        }
    }
    assert!(checked >= 40, "only {checked} instances eligible for the BN1 ⊆ BN2 check");
}

#[test]
fn endpoints_are_stable_under_a_finer_scan() {
    let g = GFunction::product();
    for (_, th, t) in MEDIATION {
        let inp = mediation_input(th, t);
        let coarse = InvertConfig::default();
        let fine = InvertConfig {
            scan_points: 4 * coarse.scan_points,
            ..InvertConfig::default()
        };
        let tol = 1e-4 * (1.0 + g.eval(inp.theta_hat()).abs());
        for m in [Method::Bn1, Method::Projection] {
            let a = invert_test(&g, &inp, m, 0.05, &coarse).unwrap();
            let b = invert_test(&g, &inp, m, 0.05, &fine).unwrap();
            assert!((a.lower - b.lower).abs() <= 2.0 * tol && (a.upper - b.upper).abs() <= 2.0 * tol);
        }
    }
}

#[test]
fn plug_in_limit_law_is_symmetric_at_zero() {
    let exp = ShiftExperiment::new(DMatrix::identity(2, 2), &GFunction::product(), DVector::zeros(2)).unwrap();
    let sample = exp.plug_in_limit_sample(100_000, RngStream::new(3)).unwrap();
    assert!(stats::sign_test_p_value(&sample) > 0.01);
}

#[test]
fn streams_reproduce_statistics() {
    let g = GFunction::product();
    let inp = mediation_input(MEDIATION[0].1, MEDIATION[0].2);
    let a = invert_test(&g, &inp, Method::Bn2, 0.05, &bn2_cfg()).unwrap();
    let b = invert_test(&g, &inp, Method::Bn2, 0.05, &bn2_cfg()).unwrap();
    assert_eq!(a, b);
    let other = InvertConfig {
        seed: RngStream::new(8),
        ..InvertConfig::default()
    };
    let c = invert_test(&g, &inp, Method::Bn2, 0.05, &other).unwrap();
    assert_ne!(a.critical_value, c.critical_value);
}

#[test]
fn mc_results_are_reproducible() {
    let mut d = MCDesign::new(2.0, 0.0, 100, 5);
    d.methods = vec![Method::Bn1, Method::Projection, Method::Wald];
    let mut a = run_design(&d).unwrap();
    let mut b = run_design(&d).unwrap();
    a.runtime_secs = 0.0;
    b.runtime_secs = 0.0;
    assert_eq!(a, b);
}

mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use ckm_core::cadm::{AngleDelayMap, GaussianPathDist, GeometricMap};
use ckm_core::geometry::{
    invert_los, los_angle_delay, single_bounce_paths, wrap_angle, Bounds, CompositePath,
    Environment, Point2, Scatterer, SPEED_OF_LIGHT,
};
use ckm_core::sensing::{
    composite_delay_density, localize_ckm, localize_geometry_los, localize_geometry_nlos,
    nll_and_gradient, nll_from_dists, read_observation, sensing_nll, sensing_nll_gradient,
    synthesize_observation, true_composites, write_observation, ErrorSpec, LocalizerConfig,
    SensingObservation,
};
use ckm_core::Error;
use common::{central, interior, random_model, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const C: f64 = SPEED_OF_LIGHT;

/// Observation drawn from the map's own distributions at `at`.
fn draw_from_map<M: AngleDelayMap, R: Rng>(map: &M, at: Point2, rng: &mut R) -> SensingObservation {
    let d = map.predict(at).unwrap();
    let lp = d.len();
    let mut triples = Vec::new();
    for t in 0..lp {
        for r in 0..lp {
            let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let mu = d[t].mu_tau + d[r].mu_tau;
            let sd = (d[t].var_tau + d[r].var_tau).sqrt();
            triples.push(CompositePath {
                aod_rad: wrap_angle(d[t].mu_theta + d[t].var_theta.sqrt() * n[0]),
                aoa_rad: wrap_angle(d[r].mu_theta + d[r].var_theta.sqrt() * n[1]),
                delay_s: (mu + sd * n[2]).abs().max(1e-12),
                forward: t,
                reverse: r,
            });
        }
    }
    SensingObservation::new(triples, lp, false).unwrap()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for seed in 0..40 {
        let model = random_model(seed, 3, &[24, 24], 1.0);
        let obs = draw_from_map(&model, interior(&mut rng, 5.0), &mut rng);
        let x = interior(&mut rng, 1.0);
        let g = sensing_nll_gradient(&model, &obs, x).unwrap();
        let f = |p: Point2| sensing_nll(&model, &obs, p).unwrap();
        let h = 1e-3;
        let fd = [central(f, x, 0, h), central(f, x, 1, h)];
        let fd2 = [central(f, x, 0, h / 2.0), central(f, x, 1, h / 2.0)];
        if rel_err(&fd, &fd2) > 1e-6 {
            continue; // step straddles an activation kink
        }
        let e = rel_err(&g, &fd);
        assert!(e < 1e-4, "seed {seed}: {e}");
        checked += 1;
    }
    assert!(checked >= 30);
}

/// Composite Simpson rule over `[a, b]` with `n` (even) intervals.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

#[test]
fn delay_factor_matches_convolution_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (mt, mr) = (rng.random_range(50e-9..400e-9), rng.random_range(50e-9..400e-9));
        let (st, sr): (f64, f64) = (rng.random_range(1e-9..30e-9), rng.random_range(1e-9..30e-9));
        let tau = mt + mr + rng.random_range(-2.0..2.0) * (st * st + sr * sr).sqrt();
        // ∫ p_T(s) p_R(τ − s) ds over ±12σ of the forward delay
        let q = simpson(
            |s| normal_pdf(s, mt, st * st) * normal_pdf(tau - s, mr, sr * sr),
            mt - 12.0 * st,
            mt + 12.0 * st,
            4000,
        );
        let got = composite_delay_density(tau, mt, st * st, mr, sr * sr);
        assert_relative_eq!(got, q, max_relative = 1e-6);
    }
}

#[test]
fn delay_factor_example() {
    let ns = 1e-9;
    let got = composite_delay_density(260.0 * ns, 100.0 * ns, 4.0 * ns * ns, 150.0 * ns, 9.0 * ns * ns);
    let want = normal_pdf(260.0 * ns, 250.0 * ns, 13.0 * ns * ns);
    assert_relative_eq!(got, want, max_relative = 1e-12);
}

fn toy_env(los_blocked: bool) -> Environment {
    Environment::new(
        Point2::new(0.0, 0.0),
        vec![Scatterer {
            position: Point2::new(3.0, 4.0),
            reflectivity: 1.0,
        }],
        Bounds::new(10.0, 10.0).unwrap(),
        los_blocked,
    )
    .unwrap()
}

#[test]
fn zero_residual_nll_is_normalizers_only() {
    let (vt, vd) = (1e-3, 4e-18);
    let map = GeometricMap::new(toy_env(true), 1, vt, vd).unwrap();
    let x = Point2::new(6.0, 0.0);
    let obs = SensingObservation::new(true_composites(&map.env, x, 1, false).unwrap(), 1, false).unwrap();
    let want = 2.0 * 0.5 * (2.0 * PI * vt).ln() + 0.5 * (2.0 * PI * 2.0 * vd).ln();
    assert_relative_eq!(sensing_nll(&map, &obs, x).unwrap(), want, max_relative = 1e-12);
    assert_eq!(sensing_nll_gradient(&map, &obs, x).unwrap(), [0.0, 0.0]);
}

#[test]
fn path_count_mismatch_is_an_error() {
    let map = GeometricMap::new(common::small_scene(1, 10, true), 3, 1e-4, 1e-18).unwrap();
    let obs = SensingObservation::new(
        true_composites(&map.env, Point2::new(30.0, 40.0), 2, false).unwrap(),
        2,
        false,
    )
    .unwrap();
    assert!(matches!(
        sensing_nll(&map, &obs, Point2::new(30.0, 40.0)),
        Err(Error::PathCountMismatch { expected: 3, found: 2 })
    ));
}

#[test]
fn reciprocal_nll_is_the_diagonal_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..10 {
        let model = random_model(seed, 4, &[16, 16], 1.0);
        let full = draw_from_map(&model, interior(&mut rng, 5.0), &mut rng);
        let x = interior(&mut rng, 5.0);
        let eval = model.evaluate(x).unwrap();
        // per-term oracle: each triple on its own
        let (mut f, mut g) = (0.0, [0.0; 2]);
        for t in full.triples.iter().filter(|t| t.forward == t.reverse) {
            let one = SensingObservation {
                triples: vec![*t],
                ..full.clone()
            };
            let (fi, gi) = nll_and_gradient(&eval, &one, None);
            f += fi;
            g[0] += gi[0];
            g[1] += gi[1];
        }
        let rec = full.reciprocal_subset();
        assert_relative_eq!(sensing_nll(&model, &rec, x).unwrap(), f, max_relative = 1e-12);
        let gr = sensing_nll_gradient(&model, &rec, x).unwrap();
        assert!(rel_err(&gr, &g) < 1e-12);
    }
}

#[test]
fn truth_is_stationary_for_exact_map() {
    for seed in 0..10 {
        let env = common::scene(seed, true);
        let map = GeometricMap::new(env.clone(), 5, 1e-4, 1e-18).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ckm_core::harness::sample_target(&env, 1.0, &mut rng).unwrap();
        let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
        let g = sensing_nll_gradient(&map, &obs, x).unwrap();
        assert!(g[0].hypot(g[1]) < 1e-6);
    }
}

#[test]
fn accepted_steps_decrease_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_model(2, 3, &[16, 16], 1.0);
    let obs = draw_from_map(&model, Point2::new(40.0, 40.0), &mut rng);
    let mut x = Point2::new(70.0, 20.0);
    let f0 = sensing_nll(&model, &obs, x).unwrap();
    let mut f = f0;
    let mut eta = 1.0;
    let mut accepted = 0;
    let mut trace = vec![f0];
    for _ in 0..200 {
        let g = sensing_nll_gradient(&model, &obs, x).unwrap();
        if g[0].hypot(g[1]) < 1e-9 || eta < 1e-12 {
            break;
        }
        let p = Point2::new(x.x - eta * g[0], x.y - eta * g[1]);
        let fp = sensing_nll(&model, &obs, p).unwrap();
        if fp < f {
            x = p;
            f = fp;
            accepted += 1;
            trace.push(f);
        } else {
            eta *= 0.5;
        }
    }
    assert!(accepted > 10);
    assert!(trace.windows(2).all(|w| w[1] < w[0]));
    assert!(f < f0);
}

#[test]
fn zero_budget_returns_best_grid_point() {
    let env = common::scene(3, true);
    let map = GeometricMap::new(env.clone(), 5, 1e-4, 1e-18).unwrap();
    let x = Point2::new(37.3, 61.9);
    let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
    let cfg = LocalizerConfig {
        max_iters: 0,
        scan_keep: 0,
        ..Default::default()
    };
    let r = localize_ckm(&map, &obs, &env.bounds, &cfg, &[]).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations_used, 0);
    assert_eq!(r.estimate, r.start_used);

    let mut best = (f64::INFINITY, Point2::new(0.0, 0.0));
    for i in 0..10 {
        for j in 0..10 {
            let p = Point2::new(5.0 + 10.0 * i as f64, 5.0 + 10.0 * j as f64);
            if let Ok(f) = sensing_nll(&map, &obs, p) {
                if f < best.0 {
                    best = (f, p);
                }
            }
        }
    }
    assert_eq!(r.estimate, best.1);
    assert_relative_eq!(r.neg_log_likelihood, best.0, max_relative = 1e-12);
}

#[test]
fn start_at_truth_is_not_beaten_by_worse_point() {
    let env = common::scene(4, true);
    let map = GeometricMap::new(env.clone(), 5, 1e-4, 1e-18).unwrap();
    let x = Point2::new(25.0, 75.0); // a 10×10 cell centre
    let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
    let r = localize_ckm(&map, &obs, &env.bounds, &LocalizerConfig::default(), &[]).unwrap();
    let at_truth = sensing_nll(&map, &obs, x).unwrap();
    assert!(r.neg_log_likelihood <= at_truth + 1e-9);
}

#[test]
fn oracle_localization_small_sample() {
    let mut hits = 0;
    for seed in 100..110 {
        let env = common::scene(seed, true);
        let map = GeometricMap::new(env.clone(), 5, 1e-4, 1e-18).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ckm_core::harness::sample_target(&env, 1.0, &mut rng).unwrap();
        let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
        let r = localize_ckm(&map, &obs, &env.bounds, &LocalizerConfig::default(), &[]).unwrap();
        assert!(env.bounds.contains(&r.estimate));
        hits += usize::from(r.estimate.distance_to(&x) < 0.1);
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn invalid_localizer_config_is_rejected() {
    let env = common::scene(4, true);
    let map = GeometricMap::new(env.clone(), 5, 1e-4, 1e-18).unwrap();
    let obs = SensingObservation::new(
        true_composites(&env, Point2::new(20.0, 20.0), 5, false).unwrap(),
        5,
        false,
    )
    .unwrap();
    for cfg in [
        LocalizerConfig { step_size: 0.0, ..Default::default() },
        LocalizerConfig { multistart_grid: (0, 3), ..Default::default() },
    ] {
        assert!(matches!(
            localize_ckm(&map, &obs, &env.bounds, &cfg, &[]),
            Err(Error::InvalidConfig(_))
        ));
    }
}

#[test]
fn geometry_los_noiseless_and_perturbed() {
    let bs = Point2::new(50.0, 0.0);
    let x = Point2::new(50.0 + 30.0 * 0.6, 30.0 * 0.8);
    let (a, d) = los_angle_delay(bs, x).unwrap();
    assert!(localize_geometry_los(a, d, bs).unwrap().distance_to(&x) < 1e-9);

    // angle error only: the estimate moves along the 30 m circle
    let dth = 0.5;
    let e = localize_geometry_los(a + dth, d, bs).unwrap().distance_to(&x);
    assert_relative_eq!(e, 2.0 * 30.0 * (dth / 2.0).sin(), max_relative = 1e-9);
    assert!((e - 30.0 * dth).abs() / (30.0 * dth) < 0.02);

    // delay error only: purely radial
    let dtau = 7e-9;
    let e = localize_geometry_los(a, d + dtau, bs).unwrap();
    assert_relative_eq!(e.distance_to(&x), C * dtau / 2.0, max_relative = 1e-9);
    assert_relative_eq!(e.distance_to(&bs), 30.0 + C * dtau / 2.0, max_relative = 1e-12);
    assert!(localize_geometry_los(a, 0.0, bs).is_err());
}

#[test]
fn geometry_nlos_overshoots_in_pure_nlos() {
    for seed in 0..10 {
        let env = common::scene(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ckm_core::harness::sample_target(&env, 1.0, &mut rng).unwrap();
        let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
        let est = localize_geometry_nlos(&obs, env.bs).unwrap();
        assert!(est.distance_to(&env.bs) >= x.distance_to(&env.bs) - 1e-9);
    }
}

#[test]
fn geometry_nlos_single_bounce_oracle() {
    let env = toy_env(true);
    let x = Point2::new(6.0, 0.0);
    let obs = SensingObservation::new(true_composites(&env, x, 1, false).unwrap(), 1, false).unwrap();
    let est = localize_geometry_nlos(&obs, env.bs).unwrap();
    // round trip 2·(5 + 5) m, treated as direct: 10 m along the scatterer bearing
    assert_relative_eq!(est.x, 6.0, epsilon = 1e-9);
    assert_relative_eq!(est.y, 8.0, epsilon = 1e-9);
    assert!(est.distance_to(&x) > 7.9);
}

#[test]
fn geometry_nlos_with_open_los_matches_los_inversion() {
    let env = common::scene(2, false);
    let x = Point2::new(52.0, 12.0);
    let w = single_bounce_paths(&env, x, 5).unwrap();
    assert!(w.paths().iter().any(|p| p.origin == ckm_core::geometry::PathOrigin::Direct));
    let obs = SensingObservation::new(true_composites(&env, x, 5, false).unwrap(), 5, false).unwrap();
    let est = localize_geometry_nlos(&obs, env.bs).unwrap();
    let (a, d) = los_angle_delay(env.bs, x).unwrap();
    assert!(est.distance_to(&invert_los(a, d, env.bs).unwrap()) < 1e-9);
}

#[test]
fn nll_with_noise_adds_variances() {
    let d = vec![GaussianPathDist {
        mu_theta: 0.1,
        var_theta: 0.01,
        mu_tau: 100e-9,
        var_tau: 1e-18,
    }];
    let obs = SensingObservation::new(
        vec![CompositePath {
            aod_rad: 0.2,
            aoa_rad: 0.0,
            delay_s: 210e-9,
            forward: 0,
            reverse: 0,
        }],
        1,
        true,
    )
    .unwrap();
    let e = ErrorSpec::new(0.02, 0.03, 5e-18).unwrap();
    let want = -[
        (0.1, 0.01 + 0.02),
        (-0.1, 0.01 + 0.03),
    ]
    .iter()
    .map(|&(r, v): &(f64, f64)| -0.5 * (2.0 * PI * v).ln() - r * r / (2.0 * v))
    .sum::<f64>()
        + 0.5 * (2.0 * PI * 7e-18).ln()
        + (10e-9f64).powi(2) / (2.0 * 7e-18);
    assert_relative_eq!(nll_from_dists(&d, &obs, Some(&e)), want, max_relative = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn observation_file_round_trip(seed in 0u64..1000, reciprocal: bool) {
        let env = common::small_scene(seed, 8, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = interior(&mut rng, 3.0);
        let err = ErrorSpec::from_std(0.1, 5e-9).unwrap();
        let obs = match synthesize_observation(&env, x, &err, 4, reciprocal, &mut rng) {
            Ok(o) => o,
            Err(_) => return Ok(()),
        };
        let mut buf = Vec::new();
        write_observation(&obs, &mut buf).unwrap();
        prop_assert_eq!(read_observation(buf.as_slice()).unwrap(), obs);
    }

    #[test]
    fn noisy_angles_stay_wrapped(seed in 0u64..1000) {
        let env = common::small_scene(seed, 8, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = interior(&mut rng, 3.0);
        let err = ErrorSpec::from_std(3.0, 5e-9).unwrap();
        if let Ok(obs) = synthesize_observation(&env, x, &err, 3, false, &mut rng) {
            prop_assert_eq!(obs.triples.len(), 9);
            for t in &obs.triples {
                prop_assert!(t.aod_rad > -PI && t.aod_rad <= PI);
                prop_assert!(t.aoa_rad > -PI && t.aoa_rad <= PI);
            }
        }
    }
}

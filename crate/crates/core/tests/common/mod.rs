#![allow(dead_code)]

use ckm_core::cadm::{AngleDelayMap, CadmModel};
use ckm_core::geometry::{Bounds, Environment, Point2, Scatterer};
use ckm_core::harness::{generate_scene, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bounds() -> Bounds {
    Bounds::new(100.0, 100.0).unwrap()
}

/// Default-config scene (40 scatterers, BS at (50, 0)) drawn from `seed`.
pub fn scene(seed: u64, los_blocked: bool) -> Environment {
    let cfg = ScenarioConfig {
        los_blocked,
        ..Default::default()
    };
    generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0
}

/// Small hand-built scene with `n` scatterers.
pub fn small_scene(seed: u64, n: usize, los_blocked: bool) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scatterers = (0..n)
        .map(|_| Scatterer {
            position: Point2::new(rng.random_range(2.0..98.0), rng.random_range(2.0..98.0)),
            reflectivity: rng.random_range(0.1..1.0),
        })
        .collect();
    Environment::new(Point2::new(50.0, 0.0), scatterers, bounds(), los_blocked).unwrap()
}

/// Random untrained model; weights scaled by `gain` so outputs vary.
pub fn random_model(seed: u64, l_prime: usize, hidden: &[usize], gain: f64) -> CadmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CadmModel::initialize(&bounds(), l_prime, hidden, &mut rng).unwrap();
    for layer in &mut m.mlp.layers {
        layer.weight.mapv_inplace(|w| w * gain);
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    m
}

/// Uniform point at least `margin` inside the scene.
pub fn interior<R: Rng>(rng: &mut R, margin: f64) -> Point2 {
    Point2::new(
        rng.random_range(margin..100.0 - margin),
        rng.random_range(margin..100.0 - margin),
    )
}

/// Central difference of `f` along x (d = 0) or y (d = 1).
pub fn central<F: Fn(Point2) -> f64>(f: F, x: Point2, d: usize, h: f64) -> f64 {
    let (mut p, mut m) = (x, x);
    if d == 0 {
        p.x += h;
        m.x -= h;
    } else {
        p.y += h;
        m.y -= h;
    }
    (f(p) - f(m)) / (2.0 * h)
}

/// Relative disagreement of two vectors, normwise.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Flattened (μθ, σ²θ, μτ, σ²τ) per path, each kind divided by `scale`
/// so every entry is O(1).
pub fn flat_params(map: &dyn AngleDelayMap, x: Point2, scale: [f64; 4]) -> Vec<f64> {
    map.predict(x)
        .unwrap()
        .iter()
        .flat_map(|d| {
            [
                d.mu_theta / scale[0],
                d.var_theta / scale[1],
                d.mu_tau / scale[2],
                d.var_tau / scale[3],
            ]
        })
        .collect()
}

/// Worst per-kind relative error of the analytic Jacobian against central
/// differences, or `None` when a step straddles an activation kink.
pub fn jacobian_error(model: &CadmModel, x: Point2) -> Option<f64> {
    let jac = model.jacobian(x).unwrap();
    let hx = 1e-4 / model.input_norm.scale[0];
    let hy = 1e-4 / model.input_norm.scale[1];
    let flat = |p: Point2| -> Vec<f64> {
        model
            .forward(p)
            .unwrap()
            .iter()
            .flat_map(|d| [d.mu_theta, d.var_theta, d.mu_tau, d.var_tau])
            .collect()
    };
    let mut worst: f64 = 0.0;
    for kind in 0..4 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (d, h) in [(0, hx), (1, hy)] {
            let f = |p: Point2| flat(p);
            for row in (kind..jac.len()).step_by(4) {
                let g = |p: Point2| f(p)[row];
                let fd = central(&g, x, d, h);
                let fd2 = central(&g, x, d, h / 2.0);
                if (fd - fd2).abs() > 1e-6 * fd.abs().max(fd2.abs()).max(1e-300) {
                    return None;
                }
                let a = jac[row][d];
                num += (a - fd) * (a - fd);
                den += a * a;
            }
        }
        if den > 0.0 {
            worst = worst.max((num / den).sqrt());
        }
    }
    Some(worst)
}

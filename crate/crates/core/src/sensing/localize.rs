use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::likelihood::{nll_and_gradient, nll_from_dists};
use super::{ErrorSpec, SensingObservation};
use crate::cadm::AngleDelayMap;
use crate::error::{Error, Result};
use crate::geometry::{invert_los, Bounds, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    /// Largest step per unit gradient (m² per nat). Backtracking halves it
    /// whenever a step fails to lower the NLL; accepted steps let it double
    /// back up to this ceiling.
    pub step_size: f64,
    /// Likelihood evaluations allowed per start.
    pub max_iters: usize,
    /// Stop a start once the gradient norm falls below this (1/m).
    pub grad_tol: f64,
    /// Stop a start once the proposed move is shorter than this (m).
    pub min_step: f64,
    /// Cell-centred start grid over the scene, (nx, ny).
    pub multistart_grid: (usize, usize),
    /// Dense grid on which the NLL is scanned (means and variances only)
    /// before descent; its `scan_keep` lowest points become extra starts.
    pub scan_grid: (usize, usize),
    pub scan_keep: usize,
    /// Additional uniformly drawn starts.
    pub random_starts: usize,
    pub rng_seed: u64,
    /// Observation error added to the map variances, if known.
    pub noise: Option<ErrorSpec>,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iters: 300,
            grad_tol: 1e-6,
            min_step: 1e-6,
            multistart_grid: (10, 10),
            scan_grid: (100, 100),
            scan_keep: 20,
            random_starts: 0,
            rng_seed: 0,
            noise: None,
        }
    }
}

impl LocalizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if self.multistart_grid.0 == 0 || self.multistart_grid.1 == 0 {
            return Err(Error::InvalidConfig("start grid counts must be at least 1".into()));
        }
        if !(self.min_step > 0.0) || self.grad_tol < 0.0 {
            return Err(Error::InvalidConfig("min_step must be positive, grad_tol non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationResult {
    pub estimate: Point2,
    pub neg_log_likelihood: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub start_used: Point2,
}

#[derive(Debug, Clone)]
struct Walker {
    start: Point2,
    x: Point2,
    nll: f64,
    grad: [f64; 2],
    eta: f64,
    iters: usize,
    active: bool,
    converged: bool,
}

/// Cell centres of an `nx`×`ny` grid over the scene.
fn grid(bounds: &Bounds, (nx, ny): (usize, usize)) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            pts.push(Point2::new(
                (i as f64 + 0.5) / nx as f64 * bounds.width,
                (j as f64 + 0.5) / ny as f64 * bounds.height,
            ));
        }
    }
    pts
}

/// The `keep` scan-grid points with the lowest NLL (ties by grid order).
fn scan_starts<M: AngleDelayMap + ?Sized>(
    map: &M,
    obs: &SensingObservation,
    bounds: &Bounds,
    config: &LocalizerConfig,
) -> Vec<Point2> {
    if config.scan_keep == 0 || config.scan_grid.0 == 0 || config.scan_grid.1 == 0 {
        return Vec::new();
    }
    let pts = grid(bounds, config.scan_grid);
    let mut scored: Vec<(f64, usize)> = map
        .predict_batch(&pts)
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let f = nll_from_dists(&d.ok()?, obs, config.noise.as_ref());
            f.is_finite().then_some((f, i))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(config.scan_keep)
        .map(|(_, i)| pts[i])
        .collect()
}

fn start_points(bounds: &Bounds, config: &LocalizerConfig, extra: &[Point2]) -> Vec<Point2> {
    let mut pts = grid(bounds, config.multistart_grid);
    pts.extend(extra.iter().filter(|p| p.is_finite()).map(|&p| bounds.clamp(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    for _ in 0..config.random_starts {
        pts.push(Point2::new(
            rng.random_range(0.0..=bounds.width),
            rng.random_range(0.0..=bounds.height),
        ));
    }
    pts
}

/// Multistart projected gradient descent on the map-based NLL.
///
/// Every start descends independently; all active starts are evaluated as
/// one batch per iteration. The start with the lowest final NLL wins.
pub fn localize_ckm<M: AngleDelayMap + ?Sized>(
    map: &M,
    obs: &SensingObservation,
    bounds: &Bounds,
    config: &LocalizerConfig,
    extra_starts: &[Point2],
) -> Result<LocalizationResult> {
    config.validate()?;
    obs.validate()?;
    if map.l_prime() != obs.l_prime {
        return Err(Error::PathCountMismatch {
            expected: map.l_prime(),
            found: obs.l_prime,
        });
    }
    let noise = config.noise.as_ref();
    let score = |pts: &[Point2]| -> Vec<Option<(f64, [f64; 2])>> {
        map.evaluate_batch(pts)
            .into_iter()
            .map(|e| {
                e.ok()
                    .map(|e| nll_and_gradient(&e, obs, noise))
                    .filter(|(f, g)| f.is_finite() && g[0].is_finite() && g[1].is_finite())
            })
            .collect()
    };

    let mut starts = start_points(bounds, config, extra_starts);
    starts.extend(scan_starts(map, obs, bounds, config));
    let mut walkers: Vec<Walker> = starts
        .iter()
        .zip(score(&starts))
        .map(|(&s, r)| match r {
            Some((nll, grad)) => Walker {
                start: s,
                x: s,
                nll,
                grad,
                eta: config.step_size,
                iters: 0,
                active: config.max_iters > 0,
                converged: false,
            },
            None => Walker {
                start: s,
                x: s,
                nll: f64::INFINITY,
                grad: [0.0; 2],
                eta: 0.0,
                iters: 0,
                active: false,
                converged: false,
            },
        })
        .collect();
    if walkers.iter().all(|w| !w.nll.is_finite()) {
        return Err(Error::LocalizationFailure(
            "likelihood is not finite at any start".into(),
        ));
    }

    loop {
        let mut ids = Vec::new();
        let mut proposals = Vec::new();
        for (i, w) in walkers.iter_mut().enumerate().filter(|(_, w)| w.active) {
            if w.grad[0].hypot(w.grad[1]) <= config.grad_tol {
                w.active = false;
                w.converged = true;
                continue;
            }
            let p = bounds.clamp(Point2::new(
                w.x.x - w.eta * w.grad[0],
                w.x.y - w.eta * w.grad[1],
            ));
            if p.distance_to(&w.x) < config.min_step {
                w.active = false;
                w.converged = true;
                continue;
            }
            ids.push(i);
            proposals.push(p);
        }
        if ids.is_empty() {
            break;
        }
        for ((i, p), r) in ids.into_iter().zip(&proposals).zip(score(&proposals)) {
            let w = &mut walkers[i];
            w.iters += 1;
            match r {
                Some((nll, grad)) if nll < w.nll => {
                    w.x = *p;
                    w.nll = nll;
                    w.grad = grad;
                    w.eta = (2.0 * w.eta).min(config.step_size);
                }
                _ => w.eta *= 0.5,
            }
            if w.iters >= config.max_iters {
                w.active = false;
            }
        }
    }

    let best = walkers
        .iter()
        .filter(|w| w.nll.is_finite())
        .min_by(|a, b| a.nll.total_cmp(&b.nll))
        .expect("at least one finite start");
    Ok(LocalizationResult {
        estimate: best.x,
        neg_log_likelihood: best.nll,
        iterations_used: best.iters,
        converged: best.converged,
        start_used: best.start,
    })
}

/// Direct-path inversion of a LoS (angle, round-trip delay) measurement.
pub fn localize_geometry_los(angle_rad: f64, delay_s: f64, bs: Point2) -> Result<Point2> {
    invert_los(angle_rad, delay_s, bs)
}

/// Treats the shortest-delay composite path as if it were the direct path.
pub fn localize_geometry_nlos(obs: &SensingObservation, bs: Point2) -> Result<Point2> {
    let shortest = obs
        .triples
        .iter()
        .min_by(|a, b| a.delay_s.total_cmp(&b.delay_s))
        .ok_or_else(|| Error::InvalidObservation("empty observation".into()))?;
    invert_los(shortest.aoa_rad, shortest.delay_s, bs)
}

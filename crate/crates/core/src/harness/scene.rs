use rand::Rng;

use super::config::ScenarioConfig;
use crate::cadm::{TrainingSample, TrainingSet};
use crate::error::{Error, Result};
use crate::geometry::{single_bounce_paths, Bounds, Environment, Point2, Scatterer};

/// Placement attempts per point before giving up.
const MAX_PLACEMENT_TRIES: usize = 10_000;

fn uniform_point<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Point2 {
    Point2::new(
        rng.random_range(0.0..=bounds.width),
        rng.random_range(0.0..=bounds.height),
    )
}

/// A uniformly placed target at least `min_sep` from the BS and every scatterer.
pub fn sample_target<R: Rng + ?Sized>(env: &Environment, min_sep: f64, rng: &mut R) -> Result<Point2> {
    for _ in 0..MAX_PLACEMENT_TRIES {
        let p = uniform_point(&env.bounds, rng);
        let clear = p.distance_to(&env.bs) >= min_sep
            && env
                .scatterers
                .iter()
                .all(|s| p.distance_to(&s.position) >= min_sep);
        if clear {
            return Ok(p);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no target position {min_sep} m clear of BS and scatterers"
    )))
}

/// Random scene and target. The environment carries `config.los_blocked`.
pub fn generate_scene<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<(Environment, Point2)> {
    config.validate()?;
    let bounds = Bounds::new(config.area.0, config.area.1)?;
    let min_sep = config.min_separation;
    let mut scatterers: Vec<Scatterer> = Vec::with_capacity(config.n_scatterers);
    for i in 0..config.n_scatterers {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = uniform_point(&bounds, rng);
            if p.distance_to(&config.bs) >= min_sep
                && scatterers.iter().all(|s| p.distance_to(&s.position) >= min_sep)
            {
                scatterers.push(Scatterer {
                    position: p,
                    // (0, 1]
                    reflectivity: 1.0 - rng.random::<f64>(),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidConfig(format!(
                "could not place scatterer {i} with {min_sep} m separation"
            )));
        }
    }
    let env = Environment::new(config.bs, scatterers, bounds, config.los_blocked)?;
    let target = sample_target(&env, min_sep, rng)?;
    Ok((env, target))
}

/// `n_train` uniform locations with their strongest `l_prime` paths.
/// Locations where the geometry degenerates are redrawn.
pub fn build_training_set<R: Rng + ?Sized>(
    env: &Environment,
    n_train: usize,
    l_prime: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    let mut samples = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        let mut last_err = None;
        let mut got = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let loc = uniform_point(&env.bounds, rng);
            match single_bounce_paths(env, loc, l_prime) {
                Ok(truth) => {
                    got = Some(TrainingSample { location: loc, truth });
                    break;
                }
                Err(e @ Error::DegenerateGeometry(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        match got {
            Some(s) => samples.push(s),
            None => return Err(last_err.expect("at least one attempt")),
        }
    }
    TrainingSet::new(env.bounds, samples)
}

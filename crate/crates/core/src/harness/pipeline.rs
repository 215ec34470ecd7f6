use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Method, ScenarioConfig};
use super::scene::{build_training_set, generate_scene};
use super::sweep::{derive_seed, stream, SweepContext};
use crate::cadm::{train, CadmModel, TrainReport, TrainingSet};
use crate::error::Result;
use crate::geometry::{Environment, Point2};

/// The fixed scene of a configuration: drawn once from the master seed.
pub fn scenario_scene(config: &ScenarioConfig) -> Result<(Environment, Point2)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, stream::SCENE, 0));
    generate_scene(config, &mut rng)
}

/// Training data for `env` with the direct path open or blocked. Both
/// variants sample the same locations.
pub fn scenario_training_set(
    config: &ScenarioConfig,
    env: &Environment,
    los_blocked: bool,
) -> Result<TrainingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, stream::TRAIN_DATA, 0));
    build_training_set(
        &env.with_los_blocked(los_blocked),
        config.n_train,
        config.l_prime,
        &mut rng,
    )
}

#[derive(Debug, Clone)]
pub struct TrainedMap {
    pub model: CadmModel,
    pub report: TrainReport,
}

/// Maps needed by the configured methods.
#[derive(Debug, Clone, Default)]
pub struct TrainedMaps {
    /// Trained with the direct path open.
    pub los: Option<TrainedMap>,
    /// Trained on the scene as configured (`los_blocked`).
    pub nlos: Option<TrainedMap>,
}

impl TrainedMaps {
    pub fn context<'a>(&'a self, env: &'a Environment) -> SweepContext<'a> {
        SweepContext {
            env,
            los_map: self.los.as_ref().map(|m| &m.model as _),
            nlos_map: self.nlos.as_ref().map(|m| &m.model as _),
        }
    }
}

pub fn train_map(config: &ScenarioConfig, env: &Environment, los_blocked: bool) -> Result<TrainedMap> {
    let data = scenario_training_set(config, env, los_blocked)?;
    let s = if los_blocked {
        stream::TRAIN_NLOS
    } else {
        stream::TRAIN_LOS
    };
    let (model, report) = train(&data, &config.train, derive_seed(config.master_seed, s, 0))?;
    Ok(TrainedMap { model, report })
}

/// Train whichever of the two maps the configured methods use.
pub fn train_maps(config: &ScenarioConfig, env: &Environment) -> Result<TrainedMaps> {
    let needs = |m: Method| config.methods.contains(&m);
    let los = if needs(Method::CkmLos) {
        Some(train_map(config, env, false)?)
    } else {
        None
    };
    let nlos = if needs(Method::CkmNlos) || needs(Method::CkmNlosConv) {
        Some(train_map(config, env, config.los_blocked)?)
    } else {
        None
    };
    Ok(TrainedMaps { los, nlos })
}

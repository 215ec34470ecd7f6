use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Method, NoisePoint, ScenarioConfig};
use super::scene::sample_target;
use crate::cadm::AngleDelayMap;
use crate::error::{Error, Result};
use crate::geometry::{los_angle_delay, wrap_angle, Environment, Point2};
use crate::sensing::{
    localize_ckm, localize_geometry_los, localize_geometry_nlos, synthesize_observation,
    LocalizerConfig, SensingObservation,
};

/// Independent random streams derived from the master seed.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const TRAIN_LOS: u64 = 3;
    pub const TRAIN_NLOS: u64 = 4;
    pub const TRIAL: u64 = 5;
    pub const CRLB: u64 = 6;
}

/// Per-trial sub-streams.
const OBS_NLOS: u64 = 1;
const OBS_LOS: u64 = 2;
const OBS_DIRECT: u64 = 3;
const LOCALIZER: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream`, item `index`, under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

/// Scene and maps shared by every trial of a sweep.
pub struct SweepContext<'a> {
    /// Scene for the NLoS methods; LoS methods see it with the direct path open.
    pub env: &'a Environment,
    pub los_map: Option<&'a dyn AngleDelayMap>,
    pub nlos_map: Option<&'a dyn AngleDelayMap>,
}

impl SweepContext<'_> {
    fn map_for(&self, m: Method) -> Result<&dyn AngleDelayMap> {
        let map = if m == Method::CkmLos {
            self.los_map
        } else {
            self.nlos_map
        };
        map.ok_or_else(|| Error::InvalidConfig(format!("{m} needs a trained map")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub method: Method,
    pub sigma_theta: f64,
    pub sigma_tau: f64,
    pub trial: usize,
    pub target: Point2,
    pub estimate: Option<Point2>,
    pub error_m: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub neg_log_likelihood: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub sigma_theta: f64,
    pub sigma_tau: f64,
    pub rmse: f64,
    pub n_trials: usize,
    pub mean_iters: f64,
    pub failure_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialRecord>,
}

struct Estimate {
    point: Point2,
    iterations: usize,
    converged: bool,
    nll: Option<f64>,
}

fn run_method(
    method: Method,
    ctx: &SweepContext,
    config: &ScenarioConfig,
    point: &NoisePoint,
    trial_seed: u64,
    target: Point2,
) -> Result<Estimate> {
    let err = point.error_spec()?;
    let los_env;
    let env = if method.uses_los_scene() {
        los_env = ctx.env.with_los_blocked(false);
        &los_env
    } else {
        ctx.env
    };
    let observe = |stream: u64| -> Result<SensingObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, stream, 0));
        synthesize_observation(env, target, &err, config.l_prime, false, &mut rng)
    };
    let geo = |point| Estimate {
        point,
        iterations: 0,
        converged: true,
        nll: None,
    };
    match method {
        Method::GeoLos => {
            let (angle, delay) = los_angle_delay(env.bs, target)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, OBS_DIRECT, 0));
            let n: [f64; 2] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let angle = wrap_angle(angle + err.var_aoa.sqrt() * n[0]);
            let delay = delay + err.var_delay.sqrt() * n[1];
            Ok(geo(localize_geometry_los(angle, delay, env.bs)?))
        }
        Method::GeoNlos => Ok(geo(localize_geometry_nlos(&observe(OBS_NLOS)?, env.bs)?)),
        Method::CkmLos | Method::CkmNlos | Method::CkmNlosConv => {
            let full = observe(if method == Method::CkmLos { OBS_LOS } else { OBS_NLOS })?;
            let obs = if method == Method::CkmNlosConv {
                full.reciprocal_subset()
            } else {
                full
            };
            let extra: Vec<Point2> = localize_geometry_nlos(&obs, env.bs).into_iter().collect();
            let loc_cfg = LocalizerConfig {
                rng_seed: derive_seed(trial_seed, LOCALIZER, 0),
                noise: config.localizer_knows_noise.then_some(err),
                ..config.localizer.clone()
            };
            let r = localize_ckm(ctx.map_for(method)?, &obs, &env.bounds, &loc_cfg, &extra)?;
            Ok(Estimate {
                point: r.estimate,
                iterations: r.iterations_used,
                converged: r.converged,
                nll: Some(r.neg_log_likelihood),
            })
        }
    }
}

fn run_trial(
    ctx: &SweepContext,
    config: &ScenarioConfig,
    point: &NoisePoint,
    trial: usize,
) -> Vec<TrialRecord> {
    // Trial randomness depends only on the trial index, so every noise point
    // and method sees the same targets and the same standard-normal draws.
    let trial_seed = derive_seed(config.master_seed, stream::TRIAL, trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let target = sample_target(ctx.env, config.min_separation, &mut rng);
    config
        .methods
        .iter()
        .map(|&method| {
            let result = target
                .as_ref()
                .map_err(|e| Error::InvalidConfig(e.to_string()))
                .and_then(|&t| run_method(method, ctx, config, point, trial_seed, t));
            let target = *target.as_ref().unwrap_or(&Point2::new(f64::NAN, f64::NAN));
            let mut rec = TrialRecord {
                method,
                sigma_theta: point.sigma_theta,
                sigma_tau: point.sigma_tau,
                trial,
                target,
                estimate: None,
                error_m: None,
                iterations: 0,
                converged: false,
                neg_log_likelihood: None,
                failure: None,
            };
            match result {
                Ok(e) if e.point.is_finite() => {
                    rec.estimate = Some(e.point);
                    rec.error_m = Some(e.point.distance_to(&target));
                    rec.iterations = e.iterations;
                    rec.converged = e.converged;
                    rec.neg_log_likelihood = e.nll;
                }
                Ok(_) => rec.failure = Some("non-finite estimate".into()),
                Err(e) => rec.failure = Some(e.to_string()),
            }
            rec
        })
        .collect()
}

/// Collapse per-trial records of one (method, noise point) into a row.
pub fn aggregate(records: &[&TrialRecord]) -> Option<SweepRow> {
    let first = records.first()?;
    let errs: Vec<f64> = records.iter().filter_map(|r| r.error_m).collect();
    let ok = errs.len();
    let rmse = if ok == 0 {
        f64::NAN
    } else {
        (errs.iter().map(|e| e * e).sum::<f64>() / ok as f64).sqrt()
    };
    let mean_iters = if ok == 0 {
        0.0
    } else {
        records
            .iter()
            .filter(|r| r.error_m.is_some())
            .map(|r| r.iterations as f64)
            .sum::<f64>()
            / ok as f64
    };
    Some(SweepRow {
        method: first.method,
        sigma_theta: first.sigma_theta,
        sigma_tau: first.sigma_tau,
        rmse,
        n_trials: records.len(),
        mean_iters,
        failure_count: records.len() - ok,
    })
}

/// Every configured method at every noise point, `n_trials` targets each.
///
/// Rows are ordered by noise point, then by method as configured. Trials
/// run in parallel; results do not depend on scheduling.
pub fn run_sweep(config: &ScenarioConfig, ctx: &SweepContext) -> Result<SweepOutput> {
    config.validate()?;
    for &m in config.methods.iter().filter(|m| m.is_ckm()) {
        let map = ctx.map_for(m)?;
        if map.l_prime() != config.l_prime {
            return Err(Error::PathCountMismatch {
                expected: config.l_prime,
                found: map.l_prime(),
            });
        }
    }
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for point in config.noise_points() {
        point.error_spec()?;
        let per_trial: Vec<Vec<TrialRecord>> = (0..config.n_trials)
            .into_par_iter()
            .map(|i| run_trial(ctx, config, &point, i))
            .collect();
        for (k, _) in config.methods.iter().enumerate() {
            let recs: Vec<&TrialRecord> = per_trial.iter().map(|t| &t[k]).collect();
            rows.extend(aggregate(&recs));
        }
        for k in 0..config.methods.len() {
            trials.extend(per_trial.iter().map(|t| t[k].clone()));
        }
    }
    Ok(SweepOutput { rows, trials })
}

pub const SWEEP_HEADER: &str = "method,sigma_theta,sigma_tau,rmse,n_trials,mean_iters,failure_count";
pub const TRIAL_HEADER: &str = "method,sigma_theta,sigma_tau,trial,target_x,target_y,estimate_x,estimate_y,error_m,iterations,converged,neg_log_likelihood,failure";

/// 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            fmt_f64(r.sigma_theta),
            fmt_f64(r.sigma_tau),
            fmt_f64(r.rmse),
            r.n_trials,
            fmt_f64(r.mean_iters),
            r.failure_count
        )?;
    }
    Ok(())
}

pub fn write_trial_csv<W: Write>(trials: &[TrialRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRIAL_HEADER}")?;
    for t in trials {
        let failure = t.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.method,
            fmt_f64(t.sigma_theta),
            fmt_f64(t.sigma_tau),
            t.trial,
            fmt_f64(t.target.x),
            fmt_f64(t.target.y),
            fmt_opt(t.estimate.map(|p| p.x)),
            fmt_opt(t.estimate.map(|p| p.y)),
            fmt_opt(t.error_m),
            t.iterations,
            t.converged,
            fmt_opt(t.neg_log_likelihood),
            failure
        )?;
    }
    Ok(())
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    match s {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|e| Error::parse(line, format!("'{s}': {e}"))),
    }
}

pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != SWEEP_HEADER {
        return Err(Error::parse(1, format!("expected header '{SWEEP_HEADER}'")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(line, format!("'{s}': {e}")))
        };
        rows.push(SweepRow {
            method: rec[0].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?,
            sigma_theta: parse_f64(&rec[1], line)?,
            sigma_tau: parse_f64(&rec[2], line)?,
            rmse: parse_f64(&rec[3], line)?,
            n_trials: count(&rec[4])?,
            mean_iters: parse_f64(&rec[5], line)?,
            failure_count: count(&rec[6])?,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoData("sweep CSV has no rows".into()));
    }
    Ok(rows)
}

//! Mono-static sensing: noisy composite-path observations, the map-based
//! likelihood, and the localizers built on it.

mod likelihood;
mod localize;
mod obs_file;

pub use likelihood::{
    composite_delay_density, gaussian_log_pdf, nll_and_gradient, nll_from_dists, sensing_nll,
    sensing_nll_gradient, sensing_nll_with_noise,
};
pub use localize::{
    localize_ckm, localize_geometry_los, localize_geometry_nlos, LocalizationResult,
    LocalizerConfig,
};
pub use obs_file::{read_observation, write_observation};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    enumerate_composite_paths, single_bounce_paths, wrap_angle, CompositePath, Environment,
    Point2,
};

/// Variances of the angle and delay estimation errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub var_aod: f64,
    pub var_aoa: f64,
    pub var_delay: f64,
}

impl ErrorSpec {
    pub fn new(var_aod: f64, var_aoa: f64, var_delay: f64) -> Result<Self> {
        for (name, v) in [("AoD", var_aod), ("AoA", var_aoa), ("delay", var_delay)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidConfig(format!(
                    "{name} error variance must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            var_aod,
            var_aoa,
            var_delay,
        })
    }

    /// Equal AoD/AoA standard deviation `sigma_theta` (rad), delay standard
    /// deviation `sigma_tau` (s).
    pub fn from_std(sigma_theta: f64, sigma_tau: f64) -> Result<Self> {
        Self::new(
            sigma_theta * sigma_theta,
            sigma_theta * sigma_theta,
            sigma_tau * sigma_tau,
        )
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            var_aod: self.var_aod * k,
            var_aoa: self.var_aoa * k,
            var_delay: self.var_delay * k,
        }
    }
}

/// Estimated (AoD, AoA, delay) of every composite path, labeled with the
/// forward/reverse slots it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingObservation {
    pub triples: Vec<CompositePath>,
    pub l_prime: usize,
    pub reciprocal_only: bool,
}

impl SensingObservation {
    pub fn new(triples: Vec<CompositePath>, l_prime: usize, reciprocal_only: bool) -> Result<Self> {
        let obs = Self {
            triples,
            l_prime,
            reciprocal_only,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = if self.reciprocal_only {
            self.l_prime
        } else {
            self.l_prime * self.l_prime
        };
        if self.l_prime == 0 || self.triples.len() != expected {
            return Err(Error::InvalidObservation(format!(
                "expected {expected} composite paths for L'={}, got {}",
                self.l_prime,
                self.triples.len()
            )));
        }
        for t in &self.triples {
            if t.forward >= self.l_prime || t.reverse >= self.l_prime {
                return Err(Error::InvalidObservation("slot label out of range".into()));
            }
            if self.reciprocal_only && t.forward != t.reverse {
                return Err(Error::InvalidObservation(
                    "non-reciprocal path in reciprocal-only observation".into(),
                ));
            }
            if !(t.delay_s > 0.0) || !t.delay_s.is_finite() {
                return Err(Error::InvalidObservation(format!(
                    "non-positive delay {}",
                    t.delay_s
                )));
            }
            if !t.aod_rad.is_finite() || !t.aoa_rad.is_finite() {
                return Err(Error::InvalidObservation("non-finite angle".into()));
            }
        }
        Ok(())
    }

    /// Number of scalar measurements (3L).
    pub fn scalar_count(&self) -> usize {
        3 * self.triples.len()
    }

    /// The diagonal (forward = reverse) subset of a full observation.
    pub fn reciprocal_subset(&self) -> Self {
        Self {
            triples: self
                .triples
                .iter()
                .copied()
                .filter(|t| t.forward == t.reverse)
                .collect(),
            l_prime: self.l_prime,
            reciprocal_only: true,
        }
    }
}

/// Noiseless composite paths at `target`.
pub fn true_composites(
    env: &Environment,
    target: Point2,
    l_prime: usize,
    reciprocal_only: bool,
) -> Result<Vec<CompositePath>> {
    let w = single_bounce_paths(env, target, l_prime)?;
    Ok(enumerate_composite_paths(&w, reciprocal_only))
}

/// Add independent zero-mean Gaussian errors to composite paths.
pub fn perturb<R: Rng + ?Sized>(
    truth: &[CompositePath],
    err: &ErrorSpec,
    rng: &mut R,
) -> Vec<CompositePath> {
    let (sa, sb, sd) = (err.var_aod.sqrt(), err.var_aoa.sqrt(), err.var_delay.sqrt());
    truth
        .iter()
        .map(|t| {
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            let n3: f64 = StandardNormal.sample(rng);
            CompositePath {
                aod_rad: wrap_angle(t.aod_rad + sa * n1),
                aoa_rad: wrap_angle(t.aoa_rad + sb * n2),
                delay_s: t.delay_s + sd * n3,
                ..*t
            }
        })
        .collect()
}

/// Noisy observation of the composite paths a target at `target` produces.
pub fn synthesize_observation<R: Rng + ?Sized>(
    env: &Environment,
    target: Point2,
    err: &ErrorSpec,
    l_prime: usize,
    reciprocal_only: bool,
    rng: &mut R,
) -> Result<SensingObservation> {
    let truth = true_composites(env, target, l_prime, reciprocal_only)?;
    SensingObservation::new(perturb(&truth, err, rng), l_prime, reciprocal_only)
}

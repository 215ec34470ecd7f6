//! Negative log-likelihood of a composite-path observation under an
//! angle-delay map, and its closed-form location gradient.
//!
//! Each composite path `(φ, θ, τ)` with slots `(t, r)` contributes
//!
//! ```text
//! N(φ; μθ_t, σ²θ_t) · N(θ; μθ_r, σ²θ_r) · N(τ; μτ_t + μτ_r, σ²τ_t + σ²τ_r)
//! ```
//!
//! The delay factor is the density of a sum of two independent Gaussian
//! one-way delays. Angle residuals are wrapped into (−π, π].

use std::f64::consts::PI;

use super::{ErrorSpec, SensingObservation};
use crate::cadm::{AngleDelayMap, GaussianPathDist, MapEvaluation};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
pub fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * r * r / var
}

/// Density of `τ_t + τ_r` at `tau` for independent Gaussian one-way delays.
pub fn composite_delay_density(tau: f64, mu_t: f64, var_t: f64, mu_r: f64, var_r: f64) -> f64 {
    let v = var_t + var_r;
    let r = tau - mu_t - mu_r;
    (-0.5 * r * r / v).exp() / (2.0 * PI * v).sqrt()
}

fn check(map_l_prime: usize, obs: &SensingObservation) -> Result<()> {
    if map_l_prime != obs.l_prime {
        return Err(Error::PathCountMismatch {
            expected: map_l_prime,
            found: obs.l_prime,
        });
    }
    Ok(())
}

/// NLL and its gradient from an already evaluated map.
///
/// `noise`, when given, is added to the map variances (observation error on
/// top of the map's own spread).
pub fn nll_and_gradient(
    eval: &MapEvaluation,
    obs: &SensingObservation,
    noise: Option<&ErrorSpec>,
) -> (f64, [f64; 2]) {
    let (ea, eb, ed) = noise.map_or((0.0, 0.0, 0.0), |e| (e.var_aod, e.var_aoa, e.var_delay));
    let d = &eval.dists;
    let j = &eval.jacobian;
    let mut nll = 0.0;
    let mut g = [0.0; 2];

    // -ln N(x; μ, v) = ½ln(2πv) + r²/(2v); ∂/∂μ = −r/v, ∂/∂v = ½(1/v − r²/v²)
    let mut term = |r: f64, v: f64, dmu: [f64; 2], dv: [f64; 2]| {
        nll += HALF_LN_2PI + 0.5 * v.ln() + 0.5 * r * r / v;
        let a = -r / v;
        let b = 0.5 * (1.0 / v - r * r / (v * v));
        g[0] += a * dmu[0] + b * dv[0];
        g[1] += a * dmu[1] + b * dv[1];
    };

    for p in &obs.triples {
        let (t, r) = (p.forward, p.reverse);
        term(
            wrap_angle(p.aod_rad - d[t].mu_theta),
            d[t].var_theta + ea,
            j[t].mu_theta,
            j[t].var_theta,
        );
        term(
            wrap_angle(p.aoa_rad - d[r].mu_theta),
            d[r].var_theta + eb,
            j[r].mu_theta,
            j[r].var_theta,
        );
        term(
            p.delay_s - d[t].mu_tau - d[r].mu_tau,
            d[t].var_tau + d[r].var_tau + ed,
            [
                j[t].mu_tau[0] + j[r].mu_tau[0],
                j[t].mu_tau[1] + j[r].mu_tau[1],
            ],
            [
                j[t].var_tau[0] + j[r].var_tau[0],
                j[t].var_tau[1] + j[r].var_tau[1],
            ],
        );
    }
    (nll, g)
}

/// −ln P(ẑ | x) under the map.
pub fn sensing_nll<M: AngleDelayMap + ?Sized>(
    map: &M,
    obs: &SensingObservation,
    x: Point2,
) -> Result<f64> {
    sensing_nll_with_noise(map, obs, x, None)
}

pub fn sensing_nll_with_noise<M: AngleDelayMap + ?Sized>(
    map: &M,
    obs: &SensingObservation,
    x: Point2,
    noise: Option<&ErrorSpec>,
) -> Result<f64> {
    check(map.l_prime(), obs)?;
    Ok(nll_from_dists(&map.predict(x)?, obs, noise))
}

/// NLL from already predicted distributions.
pub fn nll_from_dists(
    d: &[GaussianPathDist],
    obs: &SensingObservation,
    noise: Option<&ErrorSpec>,
) -> f64 {
    let (ea, eb, ed) = noise.map_or((0.0, 0.0, 0.0), |e| (e.var_aod, e.var_aoa, e.var_delay));
    obs.triples
        .iter()
        .map(|p| {
            let (t, r) = (&d[p.forward], &d[p.reverse]);
            -gaussian_log_pdf(wrap_angle(p.aod_rad - t.mu_theta), 0.0, t.var_theta + ea)
                - gaussian_log_pdf(wrap_angle(p.aoa_rad - r.mu_theta), 0.0, r.var_theta + eb)
                - gaussian_log_pdf(p.delay_s, t.mu_tau + r.mu_tau, t.var_tau + r.var_tau + ed)
        })
        .sum()
}

/// ∇ₓ of [`sensing_nll`], in closed form through the map Jacobian.
pub fn sensing_nll_gradient<M: AngleDelayMap + ?Sized>(
    map: &M,
    obs: &SensingObservation,
    x: Point2,
) -> Result<[f64; 2]> {
    check(map.l_prime(), obs)?;
    let eval = map.evaluate(x)?;
    Ok(nll_and_gradient(&eval, obs, None).1)
}

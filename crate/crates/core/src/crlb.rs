//! Fisher information about the target location and the resulting
//! Cramér-Rao bound.
//!
//! Two estimates are available for a map-based likelihood:
//!
//! - closed form: `I = Jᵀ Σ⁻¹ J` with `J` the Jacobian of the composite-path
//!   means and `Σ` the map variances plus observation error, both frozen at
//!   the evaluation point;
//! - Monte Carlo: the average outer product of the full score, including the
//!   dependence of the map variances on location.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cadm::{AngleDelayMap, MapEvaluation};
use crate::error::{Error, Result};
use crate::geometry::{slot_pairs, wrap_angle, CompositePath, Point2, SPEED_OF_LIGHT};
use crate::sensing::{nll_and_gradient, ErrorSpec, SensingObservation};

/// Eigenvalue ratio below which the FIM is treated as singular.
const CONDITION_LIMIT: f64 = 1e12;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FimReport {
    pub fim: Mat2,
    /// Inverse of `fim`; all entries `+inf` when singular.
    pub crlb: Mat2,
    /// `+inf` when singular.
    pub trace_crlb: f64,
    pub jacobian_rows: usize,
    pub singular: bool,
    /// Score samples averaged (0 for closed-form reports).
    pub n_samples: usize,
    /// Monte-Carlo samples dropped for a non-finite score.
    pub excluded: usize,
}

impl FimReport {
    fn from_fim(fim: Mat2, jacobian_rows: usize) -> Self {
        let [[a, b], [_, d]] = fim;
        let half_tr = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let (lmax, lmin) = (half_tr + disc, half_tr - disc);
        let singular = !(lmax > 0.0) || !(lmin * CONDITION_LIMIT > lmax) || !lmax.is_finite();
        let (crlb, trace_crlb) = if singular {
            ([[f64::INFINITY; 2]; 2], f64::INFINITY)
        } else {
            let det = a * d - b * b;
            let inv = [[d / det, -b / det], [-b / det, a / det]];
            (inv, (a + d) / det)
        };
        Self {
            fim,
            crlb,
            trace_crlb,
            jacobian_rows,
            singular,
            n_samples: 0,
            excluded: 0,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let [[a, b], [_, d]] = self.fim;
        0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
    }
}

/// `Σ_k r_k r_kᵀ / v_k` for Jacobian rows `r_k` with independent variances `v_k`.
pub fn fim_from_rows(rows: &[[f64; 2]], variances: &[f64]) -> Result<FimReport> {
    if rows.len() != variances.len() {
        return Err(Error::InvalidConfig(format!(
            "{} Jacobian rows but {} variances",
            rows.len(),
            variances.len()
        )));
    }
    let mut fim = [[0.0; 2]; 2];
    for (r, &v) in rows.iter().zip(variances) {
        if !(r[0].is_finite() && r[1].is_finite()) {
            return Err(Error::NumericFailure("non-finite Jacobian row".into()));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NumericFailure(format!("invalid variance {v}")));
        }
        fim[0][0] += r[0] * r[0] / v;
        fim[0][1] += r[0] * r[1] / v;
        fim[1][1] += r[1] * r[1] / v;
    }
    fim[1][0] = fim[0][1];
    Ok(FimReport::from_fim(fim, rows.len()))
}

/// Closed-form FIM for rows ordered as (AoD, AoA, delay) per composite path,
/// each with the matching variance of `err`.
pub fn fim_constant_variance(jacobian: &[[f64; 2]], err: &ErrorSpec) -> Result<FimReport> {
    if jacobian.len() % 3 != 0 {
        return Err(Error::InvalidConfig(format!(
            "Jacobian has {} rows, expected a multiple of 3",
            jacobian.len()
        )));
    }
    let vars: Vec<f64> = (0..jacobian.len())
        .map(|k| [err.var_aod, err.var_aoa, err.var_delay][k % 3])
        .collect();
    fim_from_rows(jacobian, &vars)
}

/// Rows of ∂(φ, θ, τ)/∂x for each composite path, from one map evaluation.
pub fn composite_mean_jacobian(eval: &MapEvaluation, pairs: &[(usize, usize)]) -> Vec<[f64; 2]> {
    let j = &eval.jacobian;
    let mut rows = Vec::with_capacity(3 * pairs.len());
    for &(t, r) in pairs {
        rows.push(j[t].mu_theta);
        rows.push(j[r].mu_theta);
        rows.push([
            j[t].mu_tau[0] + j[r].mu_tau[0],
            j[t].mu_tau[1] + j[r].mu_tau[1],
        ]);
    }
    rows
}

/// Per-row variances matching [`composite_mean_jacobian`]: map spread plus
/// observation error.
fn composite_variances(eval: &MapEvaluation, pairs: &[(usize, usize)], err: &ErrorSpec) -> Vec<f64> {
    let d = &eval.dists;
    let mut vars = Vec::with_capacity(3 * pairs.len());
    for &(t, r) in pairs {
        vars.push(d[t].var_theta + err.var_aod);
        vars.push(d[r].var_theta + err.var_aoa);
        vars.push(d[t].var_tau + d[r].var_tau + err.var_delay);
    }
    vars
}

/// Closed-form FIM of a map-based likelihood at `x`, variances frozen.
pub fn fim_closed_form<M: AngleDelayMap + ?Sized>(
    map: &M,
    x: Point2,
    err: &ErrorSpec,
    reciprocal_only: bool,
) -> Result<FimReport> {
    let eval = map.evaluate(x)?;
    let pairs = slot_pairs(map.l_prime(), reciprocal_only);
    fim_from_rows(
        &composite_mean_jacobian(&eval, &pairs),
        &composite_variances(&eval, &pairs, err),
    )
}

/// Average score outer product over observations drawn from the map's own
/// likelihood at `x` (map variances plus `err`).
pub fn fim_monte_carlo<M: AngleDelayMap + ?Sized, R: Rng + ?Sized>(
    map: &M,
    x: Point2,
    err: &ErrorSpec,
    reciprocal_only: bool,
    n_samples: usize,
    rng: &mut R,
) -> Result<FimReport> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let l_prime = map.l_prime();
    let eval = map.evaluate(x)?;
    let pairs = slot_pairs(l_prime, reciprocal_only);
    let d = &eval.dists;
    let mut obs = SensingObservation {
        triples: pairs
            .iter()
            .map(|&(t, r)| CompositePath {
                aod_rad: 0.0,
                aoa_rad: 0.0,
                delay_s: 0.0,
                forward: t,
                reverse: r,
            })
            .collect(),
        l_prime,
        reciprocal_only,
    };
    let mut fim = [[0.0; 2]; 2];
    let mut used = 0usize;
    for _ in 0..n_samples {
        for p in obs.triples.iter_mut() {
            let (t, r) = (&d[p.forward], &d[p.reverse]);
            let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            p.aod_rad = wrap_angle(t.mu_theta + (t.var_theta + err.var_aod).sqrt() * n[0]);
            p.aoa_rad = wrap_angle(r.mu_theta + (r.var_theta + err.var_aoa).sqrt() * n[1]);
            p.delay_s =
                t.mu_tau + r.mu_tau + (t.var_tau + r.var_tau + err.var_delay).sqrt() * n[2];
        }
        let (_, g) = nll_and_gradient(&eval, &obs, Some(err));
        if !(g[0].is_finite() && g[1].is_finite()) {
            continue;
        }
        fim[0][0] += g[0] * g[0];
        fim[0][1] += g[0] * g[1];
        fim[1][1] += g[1] * g[1];
        used += 1;
    }
    if used == 0 {
        return Err(Error::NumericFailure("every score sample was non-finite".into()));
    }
    let k = 1.0 / used as f64;
    fim[0][0] *= k;
    fim[0][1] *= k;
    fim[1][1] *= k;
    fim[1][0] = fim[0][1];
    let mut rep = FimReport::from_fim(fim, 3 * pairs.len());
    rep.n_samples = used;
    rep.excluded = n_samples - used;
    Ok(rep)
}

/// Jacobian of the LoS (angle, round-trip delay) pair with respect to the
/// target location.
pub fn los_jacobian(bs: Point2, x: Point2) -> Result<[[f64; 2]; 2]> {
    let (dx, dy) = (x.x - bs.x, x.y - bs.y);
    let r2 = dx * dx + dy * dy;
    if !(r2 > 0.0) {
        return Err(Error::DegenerateGeometry("target coincides with BS".into()));
    }
    let r = r2.sqrt();
    Ok([
        [-dy / r2, dx / r2],
        [2.0 * dx / (r * SPEED_OF_LIGHT), 2.0 * dy / (r * SPEED_OF_LIGHT)],
    ])
}

/// Bound for direct-path inversion from one angle and one round-trip delay.
pub fn fim_geometry_los(bs: Point2, x: Point2, sigma_theta: f64, sigma_tau: f64) -> Result<FimReport> {
    fim_from_rows(
        &los_jacobian(bs, x)?,
        &[sigma_theta * sigma_theta, sigma_tau * sigma_tau],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FimMethod {
    ClosedForm,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// FIM/CRLB across error levels. A failing point is kept as `Err` and the
/// sweep carries on.
pub fn crlb_sweep<M: AngleDelayMap + ?Sized>(
    map: &M,
    x: Point2,
    errs: &[ErrorSpec],
    reciprocal_only: bool,
    method: FimMethod,
) -> Vec<Result<FimReport>> {
    use rand::SeedableRng;
    errs.iter()
        .map(|e| match method {
            FimMethod::ClosedForm => fim_closed_form(map, x, e, reciprocal_only),
            FimMethod::MonteCarlo { n_samples, seed } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                fim_monte_carlo(map, x, e, reciprocal_only, n_samples, &mut rng)
            }
        })
        .collect()
}

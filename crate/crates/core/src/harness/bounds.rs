use std::io::{BufRead, Write};

use serde::Serialize;

use super::config::{Method, ScenarioConfig};
use super::sweep::{derive_seed, fmt_f64, parse_f64, stream, SweepContext};
use crate::crlb::{fim_closed_form, fim_geometry_los, fim_monte_carlo, FimReport};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Variances frozen at the evaluation point.
    ClosedForm,
    /// Full score averaged over sampled observations.
    MonteCarlo,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::ClosedForm => "closed-form",
            BoundKind::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrlbRow {
    pub method: Method,
    pub bound: BoundKind,
    pub sigma_theta: f64,
    pub sigma_tau: f64,
    /// `inf` when singular, `NaN` when the point failed.
    pub trace_crlb: f64,
    pub fim_xx: f64,
    pub fim_xy: f64,
    pub fim_yy: f64,
    pub n_samples: usize,
    pub singular: bool,
}

pub const CRLB_HEADER: &str =
    "method,bound,sigma_theta,sigma_tau,trace_crlb,fim_xx,fim_xy,fim_yy,n_samples,singular";

/// Where bounds are evaluated: the configured point or the scene centre.
pub fn crlb_location(config: &ScenarioConfig) -> Point2 {
    config
        .crlb_point
        .unwrap_or(Point2::new(config.area.0 / 2.0, config.area.1 / 2.0))
}

fn row(method: Method, bound: BoundKind, sigma: (f64, f64), rep: Result<FimReport>) -> CrlbRow {
    match rep {
        Ok(r) => CrlbRow {
            method,
            bound,
            sigma_theta: sigma.0,
            sigma_tau: sigma.1,
            trace_crlb: r.trace_crlb,
            fim_xx: r.fim[0][0],
            fim_xy: r.fim[0][1],
            fim_yy: r.fim[1][1],
            n_samples: r.n_samples,
            singular: r.singular,
        },
        Err(_) => CrlbRow {
            method,
            bound,
            sigma_theta: sigma.0,
            sigma_tau: sigma.1,
            trace_crlb: f64::NAN,
            fim_xx: f64::NAN,
            fim_xy: f64::NAN,
            fim_yy: f64::NAN,
            n_samples: 0,
            singular: true,
        },
    }
}

/// Bounds for every configured method except geometry-NLoS, at every
/// noise point. Monte-Carlo rows follow the closed-form rows of the same
/// point when `crlb_mc_samples > 0`.
pub fn run_crlb_sweep(config: &ScenarioConfig, ctx: &SweepContext) -> Result<Vec<CrlbRow>> {
    config.validate()?;
    let x = crlb_location(config);
    let methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|&m| m != Method::GeoNlos)
        .collect();
    let mut rows = Vec::new();
    for (pi, point) in config.noise_points().into_iter().enumerate() {
        let err = point.error_spec()?;
        let sigma = (point.sigma_theta, point.sigma_tau);
        for &m in &methods {
            if m == Method::GeoLos {
                let rep = fim_geometry_los(ctx.env.bs, x, err.var_aoa.sqrt(), err.var_delay.sqrt());
                rows.push(row(m, BoundKind::ClosedForm, sigma, rep));
                continue;
            }
            let map = match (m, ctx.los_map, ctx.nlos_map) {
                (Method::CkmLos, Some(map), _) => map,
                (Method::CkmLos, None, _) => {
                    return Err(Error::InvalidConfig(format!("{m} needs a trained map")))
                }
                (_, _, Some(map)) => map,
                (_, _, None) => {
                    return Err(Error::InvalidConfig(format!("{m} needs a trained map")))
                }
            };
            let reciprocal = m == Method::CkmNlosConv;
            rows.push(row(
                m,
                BoundKind::ClosedForm,
                sigma,
                fim_closed_form(map, x, &err, reciprocal),
            ));
            if config.crlb_mc_samples > 0 {
                // Same stream for every method at a point: common random numbers.
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                    derive_seed(config.master_seed, stream::CRLB, pi as u64),
                );
                let rep = fim_monte_carlo(map, x, &err, reciprocal, config.crlb_mc_samples, &mut rng);
                rows.push(row(m, BoundKind::MonteCarlo, sigma, rep));
            }
        }
    }
    Ok(rows)
}

pub fn write_crlb_csv<W: Write>(rows: &[CrlbRow], mut out: W) -> Result<()> {
    writeln!(out, "{CRLB_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.bound.as_str(),
            fmt_f64(r.sigma_theta),
            fmt_f64(r.sigma_tau),
            fmt_f64(r.trace_crlb),
            fmt_f64(r.fim_xx),
            fmt_f64(r.fim_xy),
            fmt_f64(r.fim_yy),
            r.n_samples,
            r.singular
        )?;
    }
    Ok(())
}

pub fn read_crlb_csv<R: BufRead>(input: R) -> Result<Vec<CrlbRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CRLB_HEADER {
        return Err(Error::parse(1, format!("expected header '{CRLB_HEADER}'")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        if rec.len() != 10 {
            return Err(Error::parse(line, format!("expected 10 fields, got {}", rec.len())));
        }
        let bound = match &rec[1] {
            "closed-form" => BoundKind::ClosedForm,
            "monte-carlo" => BoundKind::MonteCarlo,
            other => return Err(Error::parse(line, format!("unknown bound '{other}'"))),
        };
        rows.push(CrlbRow {
            method: rec[0].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?,
            bound,
            sigma_theta: parse_f64(&rec[2], line)?,
            sigma_tau: parse_f64(&rec[3], line)?,
            trace_crlb: parse_f64(&rec[4], line)?,
            fim_xx: parse_f64(&rec[5], line)?,
            fim_xy: parse_f64(&rec[6], line)?,
            fim_yy: parse_f64(&rec[7], line)?,
            n_samples: rec[8]
                .parse()
                .map_err(|e| Error::parse(line, format!("'{}': {e}", &rec[8])))?,
            singular: rec[9]
                .parse()
                .map_err(|e| Error::parse(line, format!("'{}': {e}", &rec[9])))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoData("CRLB CSV has no rows".into()));
    }
    Ok(rows)
}

//! Observation exchange as columnar text:
//!
//! ```text
//! # l_prime=5 reciprocal_only=false
//! l,aod_rad,aoa_rad,delay_s
//! 1,0.52,0.52,3.1e-7
//! ...
//! ```
//!
//! `l` is the one-based composite index; slots are recovered from it.

use std::io::{BufRead, Write};

use super::SensingObservation;
use crate::error::{Error, Result};
use crate::geometry::{composite_index, composite_linear_index, CompositePath};

pub fn write_observation<W: Write>(obs: &SensingObservation, mut out: W) -> Result<()> {
    writeln!(
        out,
        "# l_prime={} reciprocal_only={}",
        obs.l_prime, obs.reciprocal_only
    )?;
    writeln!(out, "l,aod_rad,aoa_rad,delay_s")?;
    for t in &obs.triples {
        let l = composite_linear_index(t.forward + 1, t.reverse + 1, obs.l_prime)?;
        writeln!(out, "{l},{:?},{:?},{:?}", t.aod_rad, t.aoa_rad, t.delay_s)?;
    }
    Ok(())
}

pub fn read_observation<R: BufRead>(input: R) -> Result<SensingObservation> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::NoData("empty observation file".into()))??;
    let mut l_prime = None;
    let mut reciprocal_only = None;
    for tok in first.trim_start_matches('#').split_whitespace() {
        match tok.split_once('=') {
            Some(("l_prime", v)) => {
                l_prime = Some(v.parse::<usize>().map_err(|e| Error::parse(1, e.to_string()))?)
            }
            Some(("reciprocal_only", v)) => {
                reciprocal_only =
                    Some(v.parse::<bool>().map_err(|e| Error::parse(1, e.to_string()))?)
            }
            _ => return Err(Error::parse(1, format!("unexpected token '{tok}'"))),
        }
    }
    let (Some(l_prime), Some(reciprocal_only)) = (l_prime, reciprocal_only) else {
        return Err(Error::parse(1, "expected '# l_prime=<n> reciprocal_only=<bool>'"));
    };

    let rest = lines.collect::<std::io::Result<Vec<_>>>()?.join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::parse(2, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["l", "aod_rad", "aoa_rad", "delay_s"] {
        return Err(Error::parse(2, "expected header 'l,aod_rad,aoa_rad,delay_s'"));
    }
    let mut triples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let l: usize = rec[0]
            .parse()
            .map_err(|e| Error::parse(line, format!("'{}': {e}", &rec[0])))?;
        let (t, r) = composite_index(l, l_prime).map_err(|e| Error::parse(line, e.to_string()))?;
        let num = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::parse(line, format!("'{}': {e}", &rec[k])))
        };
        triples.push(CompositePath {
            aod_rad: num(1)?,
            aoa_rad: num(2)?,
            delay_s: num(3)?,
            forward: t - 1,
            reverse: r - 1,
        });
    }
    SensingObservation::new(triples, l_prime, reciprocal_only)
}

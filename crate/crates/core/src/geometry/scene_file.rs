//! Plain-text scene format, version 1.
//!
//! ```text
//! ckm-scene 1
//! bs <x> <y>
//! bounds <width> <height>
//! los_blocked <true|false>
//! scatterers <count>
//! <x> <y> <reflectivity>      (one line per scatterer, in list order)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats are written
//! in shortest round-trip form, so write→read is exact.

use std::io::{BufRead, Write};

use super::{Bounds, Environment, Point2, Scatterer};
use crate::error::{Error, Result};

pub const SCENE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "ckm-scene";

pub fn write_scene<W: Write>(env: &Environment, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC} {SCENE_FORMAT_VERSION}")?;
    writeln!(out, "bs {:?} {:?}", env.bs.x, env.bs.y)?;
    writeln!(out, "bounds {:?} {:?}", env.bounds.width, env.bounds.height)?;
    writeln!(out, "los_blocked {}", env.los_blocked)?;
    writeln!(out, "scatterers {}", env.scatterers.len())?;
    writeln!(out, "# x y reflectivity")?;
    for s in &env.scatterers {
        writeln!(
            out,
            "{:?} {:?} {:?}",
            s.position.x, s.position.y, s.reflectivity
        )?;
    }
    Ok(())
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse::<f64>()
        .map_err(|e| Error::parse(line, format!("bad {what} '{tok}': {e}")))
}

pub fn read_scene<R: BufRead>(input: R) -> Result<Environment> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        });

    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(s))) => Ok((n, s)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
        }
    };

    let (n, header) = next("header")?;
    let mut it = header.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(Error::parse(n, "not a scene file"));
    }
    let version: u32 = it
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(n, "missing format version"))?;
    if version != SCENE_FORMAT_VERSION {
        return Err(Error::parse(
            n,
            format!("unsupported scene version {version}"),
        ));
    }

    let mut keyed = |key: &str| -> Result<(usize, Vec<String>)> {
        let (n, line) = next(key)?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(key) {
            return Err(Error::parse(n, format!("expected '{key}'")));
        }
        Ok((n, toks.map(str::to_owned).collect()))
    };

    let (n, v) = keyed("bs")?;
    let bs = Point2::new(
        parse_f64(v.first().map(String::as_str), n, "bs x")?,
        parse_f64(v.get(1).map(String::as_str), n, "bs y")?,
    );
    let (n, v) = keyed("bounds")?;
    let bounds = Bounds::new(
        parse_f64(v.first().map(String::as_str), n, "width")?,
        parse_f64(v.get(1).map(String::as_str), n, "height")?,
    )
    .map_err(|e| Error::parse(n, e.to_string()))?;
    let (n, v) = keyed("los_blocked")?;
    let los_blocked = match v.first().map(String::as_str) {
        Some("true") => true,
        Some("false") => false,
        other => return Err(Error::parse(n, format!("bad los_blocked {other:?}"))),
    };
    let (n, v) = keyed("scatterers")?;
    let count: usize = v
        .first()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::parse(n, "bad scatterer count"))?;

    let mut scatterers = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("scatterer record")?;
        let mut t = line.split_whitespace();
        let x = parse_f64(t.next(), n, "x")?;
        let y = parse_f64(t.next(), n, "y")?;
        let r = parse_f64(t.next(), n, "reflectivity")?;
        if t.next().is_some() {
            return Err(Error::parse(n, "trailing fields in scatterer record"));
        }
        scatterers.push(Scatterer {
            position: Point2::new(x, y),
            reflectivity: r,
        });
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(n, "unexpected content after scatterer records"));
    }
    Environment::new(bs, scatterers, bounds, los_blocked)
}

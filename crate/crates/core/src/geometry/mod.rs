//! Planar scene geometry: line-of-sight mapping, single-bounce path synthesis
//! and enumeration of composite (forward, reverse) round-trip paths.

mod scene_file;

pub use scene_file::{read_scene, write_scene, SCENE_FORMAT_VERSION};

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances at or below this are treated as coincident points (meters).
pub const COINCIDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Full-quadrant direction from `self` toward `other`.
    pub fn bearing_to(&self, other: &Point2) -> f64 {
        wrap_angle((other.y - self.y).atan2(other.x - self.x))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Axis-aligned scene extent with its lower-left corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bounds must be positive and finite, got {width} x {height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.is_finite() && (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point2,
    /// Reflection strength in (0, 1].
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub bs: Point2,
    pub scatterers: Vec<Scatterer>,
    pub bounds: Bounds,
    pub los_blocked: bool,
}

impl Environment {
    pub fn new(
        bs: Point2,
        scatterers: Vec<Scatterer>,
        bounds: Bounds,
        los_blocked: bool,
    ) -> Result<Self> {
        let env = Self {
            bs,
            scatterers,
            bounds,
            los_blocked,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.contains(&self.bs) {
            return Err(Error::InvalidConfig(format!(
                "base station {:?} outside scene bounds",
                self.bs
            )));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !self.bounds.contains(&s.position) {
                return Err(Error::InvalidConfig(format!(
                    "scatterer {i} at {:?} outside scene bounds",
                    s.position
                )));
            }
            if !(s.reflectivity > 0.0 && s.reflectivity <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "scatterer {i} reflectivity {} not in (0, 1]",
                    s.reflectivity
                )));
            }
        }
        Ok(())
    }

    /// Number of one-way candidate paths a location can see.
    pub fn candidate_count(&self) -> usize {
        self.scatterers.len() + usize::from(!self.los_blocked)
    }

    /// Same scene with the direct path toggled.
    pub fn with_los_blocked(&self, los_blocked: bool) -> Self {
        Self {
            los_blocked,
            ..self.clone()
        }
    }
}

/// Where a one-way path comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathOrigin {
    Direct,
    /// Index into `Environment::scatterers`.
    Scatterer(usize),
    /// Loaded from a file that does not record provenance.
    Unknown,
}

impl PathOrigin {
    fn order_key(&self) -> usize {
        match self {
            PathOrigin::Direct => 0,
            PathOrigin::Scatterer(i) => i + 1,
            PathOrigin::Unknown => usize::MAX,
        }
    }
}

/// One-way BS↔location path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommPath {
    /// Angle at the BS toward the first hop, in (−π, π].
    pub aod_rad: f64,
    pub delay_s: f64,
    pub gain: f64,
    pub origin: PathOrigin,
}

fn strongest_first(a: &CommPath, b: &CommPath) -> Ordering {
    b.gain
        .total_cmp(&a.gain)
        .then(a.delay_s.total_cmp(&b.delay_s))
        .then(a.origin.order_key().cmp(&b.origin.order_key()))
}

/// The L' dominant one-way paths at a location, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommChannelKnowledge {
    paths: Vec<CommPath>,
}

impl CommChannelKnowledge {
    /// Accepts paths that are already in canonical order (descending gain,
    /// ties by ascending delay).
    pub fn new(paths: Vec<CommPath>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidObservation("no paths".into()));
        }
        for (i, p) in paths.iter().enumerate() {
            if !(p.delay_s > 0.0 && p.delay_s.is_finite()) {
                return Err(Error::InvalidObservation(format!(
                    "path {i} delay {} is not positive",
                    p.delay_s
                )));
            }
            if !(p.gain > 0.0) || !p.aod_rad.is_finite() {
                return Err(Error::InvalidObservation(format!(
                    "path {i} has invalid gain or angle"
                )));
            }
        }
        for w in paths.windows(2) {
            let out_of_order = w[0].gain < w[1].gain
                || (w[0].gain == w[1].gain && w[0].delay_s > w[1].delay_s);
            if out_of_order {
                return Err(Error::InvalidObservation(
                    "paths not sorted by descending gain".into(),
                ));
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[CommPath] {
        &self.paths
    }

    pub fn l_prime(&self) -> usize {
        self.paths.len()
    }
}

/// Round trip formed by a forward (transmit) and a reverse (receive) one-way path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositePath {
    pub aod_rad: f64,
    pub aoa_rad: f64,
    pub delay_s: f64,
    /// Zero-based slot of the forward constituent.
    pub forward: usize,
    /// Zero-based slot of the reverse constituent.
    pub reverse: usize,
}

/// Direction and round-trip delay of the direct path from `bs` to `target`.
pub fn los_angle_delay(bs: Point2, target: Point2) -> Result<(f64, f64)> {
    let d = bs.distance_to(&target);
    if d <= COINCIDENCE_TOL || !d.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "target {target:?} coincides with base station"
        )));
    }
    Ok((bs.bearing_to(&target), 2.0 * d / SPEED_OF_LIGHT))
}

/// Position implied by a direct-path angle and round-trip delay.
pub fn invert_los(angle_rad: f64, delay_s: f64, bs: Point2) -> Result<Point2> {
    if !(delay_s > 0.0) || !delay_s.is_finite() || !angle_rad.is_finite() {
        return Err(Error::InvalidObservation(format!(
            "round-trip delay must be positive and finite, got {delay_s}"
        )));
    }
    let range = delay_s * SPEED_OF_LIGHT / 2.0;
    Ok(Point2::new(
        range * angle_rad.cos() + bs.x,
        range * angle_rad.sin() + bs.y,
    ))
}

/// Every one-way candidate path from the BS to `loc`, in scatterer order
/// (direct path first when LoS is not blocked).
pub fn candidate_paths(env: &Environment, loc: Point2) -> Result<Vec<CommPath>> {
    if !env.bounds.contains(&loc) {
        return Err(Error::DegenerateGeometry(format!(
            "location {loc:?} outside scene bounds"
        )));
    }
    let direct = env.bs.distance_to(&loc);
    if direct <= COINCIDENCE_TOL {
        return Err(Error::DegenerateGeometry(format!(
            "location {loc:?} coincides with base station"
        )));
    }
    let mut out = Vec::with_capacity(env.candidate_count());
    if !env.los_blocked {
        out.push(CommPath {
            aod_rad: env.bs.bearing_to(&loc),
            delay_s: direct / SPEED_OF_LIGHT,
            gain: 1.0 / (direct * direct),
            origin: PathOrigin::Direct,
        });
    }
    for (i, s) in env.scatterers.iter().enumerate() {
        let d1 = env.bs.distance_to(&s.position);
        let d2 = s.position.distance_to(&loc);
        if d1 <= COINCIDENCE_TOL || d2 <= COINCIDENCE_TOL {
            return Err(Error::DegenerateGeometry(format!(
                "scatterer {i} coincides with base station or location {loc:?}"
            )));
        }
        out.push(CommPath {
            aod_rad: env.bs.bearing_to(&s.position),
            delay_s: (d1 + d2) / SPEED_OF_LIGHT,
            gain: s.reflectivity / (d1 * d2),
            origin: PathOrigin::Scatterer(i),
        });
    }
    Ok(out)
}

/// The `l_prime` strongest single-bounce (plus direct, if unblocked) paths at `loc`.
pub fn single_bounce_paths(
    env: &Environment,
    loc: Point2,
    l_prime: usize,
) -> Result<CommChannelKnowledge> {
    if l_prime == 0 {
        return Err(Error::InvalidConfig("L' must be at least 1".into()));
    }
    if env.candidate_count() < l_prime {
        return Err(Error::InvalidConfig(format!(
            "scene offers {} candidate paths but L'={l_prime}",
            env.candidate_count()
        )));
    }
    let mut paths = candidate_paths(env, loc)?;
    paths.sort_by(strongest_first);
    paths.truncate(l_prime);
    Ok(CommChannelKnowledge { paths })
}

/// Map a one-based composite index `l` to one-based (forward, reverse) slots.
pub fn composite_index(l: usize, l_prime: usize) -> Result<(usize, usize)> {
    let max = l_prime * l_prime;
    if l == 0 || l > max {
        return Err(Error::IndexOutOfRange { index: l, max });
    }
    Ok(((l - 1) / l_prime + 1, (l - 1) % l_prime + 1))
}

/// Inverse of [`composite_index`]: one-based slots to one-based composite index.
pub fn composite_linear_index(l_t: usize, l_r: usize, l_prime: usize) -> Result<usize> {
    if l_t == 0 || l_r == 0 || l_t > l_prime || l_r > l_prime {
        return Err(Error::IndexOutOfRange {
            index: l_prime * (l_t.max(1) - 1) + l_r,
            max: l_prime * l_prime,
        });
    }
    Ok(l_prime * (l_t - 1) + l_r)
}

/// Zero-based (forward, reverse) slot pairs in composite-index order.
pub fn slot_pairs(l_prime: usize, reciprocal_only: bool) -> Vec<(usize, usize)> {
    if reciprocal_only {
        (0..l_prime).map(|k| (k, k)).collect()
    } else {
        (0..l_prime)
            .flat_map(|t| (0..l_prime).map(move |r| (t, r)))
            .collect()
    }
}

/// All L'² round trips (or the L' reciprocal ones) built from one-way knowledge.
pub fn enumerate_composite_paths(
    w: &CommChannelKnowledge,
    reciprocal_only: bool,
) -> Vec<CompositePath> {
    let p = w.paths();
    slot_pairs(p.len(), reciprocal_only)
        .into_iter()
        .map(|(t, r)| CompositePath {
            aod_rad: p[t].aod_rad,
            aoa_rad: p[r].aod_rad,
            delay_s: p[t].delay_s + p[r].delay_s,
            forward: t,
            reverse: r,
        })
        .collect()
}

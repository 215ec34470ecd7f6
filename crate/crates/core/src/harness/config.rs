use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cadm::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::sensing::{ErrorSpec, LocalizerConfig};

/// Standard deviations of exactly zero are replaced by these variances so
/// that a noiseless point can still be expressed as an [`ErrorSpec`].
pub const NOISELESS_VAR_ANGLE: f64 = 1e-30;
pub const NOISELESS_VAR_DELAY: f64 = 1e-40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GeoLos,
    GeoNlos,
    CkmLos,
    CkmNlos,
    CkmNlosConv,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::GeoLos,
        Method::GeoNlos,
        Method::CkmLos,
        Method::CkmNlos,
        Method::CkmNlosConv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GeoLos => "geo-los",
            Method::GeoNlos => "geo-nlos",
            Method::CkmLos => "ckm-los",
            Method::CkmNlos => "ckm-nlos",
            Method::CkmNlosConv => "ckm-nlos-conv",
        }
    }

    pub fn is_ckm(self) -> bool {
        matches!(self, Method::CkmLos | Method::CkmNlos | Method::CkmNlosConv)
    }

    /// Whether the method observes the scene with its direct path present.
    pub fn uses_los_scene(self) -> bool {
        matches!(self, Method::GeoLos | Method::CkmLos)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// One noise level: angle and delay standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma_theta: f64,
    pub sigma_tau: f64,
}

impl NoisePoint {
    pub fn error_spec(&self) -> Result<ErrorSpec> {
        let va = if self.sigma_theta == 0.0 {
            NOISELESS_VAR_ANGLE
        } else {
            self.sigma_theta * self.sigma_theta
        };
        let vd = if self.sigma_tau == 0.0 {
            NOISELESS_VAR_DELAY
        } else {
            self.sigma_tau * self.sigma_tau
        };
        ErrorSpec::new(va, va, vd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scene width and height (m).
    pub area: (f64, f64),
    pub bs: Point2,
    pub n_scatterers: usize,
    pub l_prime: usize,
    /// Whether the NLoS methods' scene has its direct path blocked.
    pub los_blocked: bool,
    /// Minimum distance between BS, scatterers and targets (m).
    pub min_separation: f64,
    pub n_train: usize,
    pub n_trials: usize,
    /// Angle sweep values (rad), run at `fixed_sigma_tau`.
    pub sigma_theta_list: Vec<f64>,
    /// Delay sweep values (s), run at `fixed_sigma_theta`.
    pub sigma_tau_list: Vec<f64>,
    pub fixed_sigma_theta: f64,
    pub fixed_sigma_tau: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    /// Give the CKM localizers the true observation error variances.
    pub localizer_knows_noise: bool,
    /// Location at which bounds are evaluated; `None` uses the scene centre.
    pub crlb_point: Option<Point2>,
    /// Score samples per Monte-Carlo bound; 0 keeps only the closed form.
    pub crlb_mc_samples: usize,
    pub train: TrainConfig,
    pub localizer: LocalizerConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area: (100.0, 100.0),
            bs: Point2::new(50.0, 0.0),
            n_scatterers: 40,
            l_prime: 5,
            los_blocked: true,
            min_separation: 1.0,
            n_train: 10_000,
            n_trials: 200,
            sigma_theta_list: vec![0.1, 0.3, 0.5],
            sigma_tau_list: vec![2e-9, 20e-9, 60e-9],
            fixed_sigma_theta: 0.1,
            fixed_sigma_tau: 20e-9,
            methods: Method::ALL.to_vec(),
            master_seed: 2024,
            localizer_knows_noise: true,
            crlb_point: None,
            crlb_mc_samples: 0,
            train: TrainConfig::default(),
            localizer: LocalizerConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.area.0 > 0.0 && self.area.1 > 0.0) {
            return bad("area must be positive");
        }
        if self.l_prime == 0 || self.n_train == 0 || self.n_trials == 0 {
            return bad("l_prime, n_train and n_trials must be positive");
        }
        if self.los_blocked && self.n_scatterers < self.l_prime {
            return Err(Error::InvalidConfig(format!(
                "{} scatterers cannot supply L'={} paths with LoS blocked",
                self.n_scatterers, self.l_prime
            )));
        }
        if self.n_scatterers + 1 < self.l_prime {
            return bad("too few scatterers for L'");
        }
        if self.sigma_theta_list.is_empty() || self.sigma_tau_list.is_empty() {
            return bad("sweep lists must be non-empty");
        }
        let sigmas = self
            .sigma_theta_list
            .iter()
            .chain(&self.sigma_tau_list)
            .chain([&self.fixed_sigma_theta, &self.fixed_sigma_tau]);
        for &s in sigmas {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("invalid standard deviation {s}")));
            }
        }
        if self.methods.is_empty() {
            return bad("methods must be non-empty");
        }
        if !(self.min_separation >= 0.0) {
            return bad("min_separation must be non-negative");
        }
        Ok(())
    }

    /// Unique sweep points: the angle sweep followed by the delay sweep, with
    /// any point already present skipped.
    pub fn noise_points(&self) -> Vec<NoisePoint> {
        let mut pts: Vec<NoisePoint> = Vec::new();
        let candidates = self
            .sigma_theta_list
            .iter()
            .map(|&t| NoisePoint {
                sigma_theta: t,
                sigma_tau: self.fixed_sigma_tau,
            })
            .chain(self.sigma_tau_list.iter().map(|&d| NoisePoint {
                sigma_theta: self.fixed_sigma_theta,
                sigma_tau: d,
            }));
        for p in candidates {
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        pts
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

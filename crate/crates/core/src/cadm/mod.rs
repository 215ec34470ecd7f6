//! Channel angle-delay map (CADM): location → per-path Gaussian angle/delay
//! distributions.
//!
//! [`CadmModel`] is the learned map (a dense network). [`GeometricMap`] is an
//! exact map computed from a known scene, used as a reference and in tests.
//! Both implement [`AngleDelayMap`], which is all the sensing and bound code
//! depends on.

mod geometric;
pub mod io;
pub mod mlp;
mod train;

pub use geometric::GeometricMap;
pub use train::{
    train, HoldoutErrors, LossKind, TrainConfig, TrainReport, TrainingSample, TrainingSet,
};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Bounds, Point2, SPEED_OF_LIGHT};
use mlp::MlpParams;

/// Smallest angle variance any map reports (rad²).
pub const VAR_FLOOR_ANGLE: f64 = 1e-6;
/// Smallest delay variance any map reports (s²).
pub const VAR_FLOOR_DELAY: f64 = 1e-20;

/// Hidden layer widths of the default network.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 256, 128];

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPathDist {
    pub mu_theta: f64,
    pub var_theta: f64,
    pub mu_tau: f64,
    pub var_tau: f64,
}

/// Location gradients of one path's four distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathJacobian {
    pub mu_theta: [f64; 2],
    pub var_theta: [f64; 2],
    pub mu_tau: [f64; 2],
    pub var_tau: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEvaluation {
    pub dists: Vec<GaussianPathDist>,
    pub jacobian: Vec<PathJacobian>,
}

impl MapEvaluation {
    /// Flattened 4L'×2 Jacobian, rows in (μθ, σ²θ, μτ, σ²τ) order per path.
    pub fn jacobian_rows(&self) -> Vec<[f64; 2]> {
        self.jacobian
            .iter()
            .flat_map(|j| [j.mu_theta, j.var_theta, j.mu_tau, j.var_tau])
            .collect()
    }
}

pub trait AngleDelayMap: Sync {
    fn l_prime(&self) -> usize;

    fn predict(&self, loc: Point2) -> Result<Vec<GaussianPathDist>>;

    fn evaluate(&self, loc: Point2) -> Result<MapEvaluation>;

    fn evaluate_batch(&self, locs: &[Point2]) -> Vec<Result<MapEvaluation>> {
        locs.iter().map(|&l| self.evaluate(l)).collect()
    }

    /// Distributions only, without the Jacobian.
    fn predict_batch(&self, locs: &[Point2]) -> Vec<Result<Vec<GaussianPathDist>>> {
        locs.iter().map(|&l| self.predict(l)).collect()
    }
}

/// Affine map from scene coordinates to network inputs: `(p − offset) · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub scale: [f64; 2],
    pub offset: [f64; 2],
}

impl InputNorm {
    /// Maps the scene rectangle onto [−1, 1]².
    pub fn for_bounds(bounds: &Bounds) -> Self {
        Self {
            scale: [2.0 / bounds.width, 2.0 / bounds.height],
            offset: [bounds.width / 2.0, bounds.height / 2.0],
        }
    }

    pub fn apply(&self, p: Point2) -> [f64; 2] {
        [
            (p.x - self.offset[0]) * self.scale[0],
            (p.y - self.offset[1]) * self.scale[1],
        ]
    }

    pub fn invert(&self, z: [f64; 2]) -> Point2 {
        Point2::new(
            z[0] / self.scale[0] + self.offset[0],
            z[1] / self.scale[1] + self.offset[1],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceMode {
    /// The network emits log-variances.
    Learned,
    /// Variances are constants; the log-variance outputs are ignored.
    Fixed { var_theta: f64, var_tau: f64 },
}

/// Learned angle-delay map.
///
/// Network output `4k..4k+4` for path slot `k` is `(μθ [rad], ln σ²θ,
/// μτ [delay units], ln σ²τ [delay units²])`, where one delay unit is
/// `delay_unit_scale` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CadmModel {
    pub mlp: MlpParams,
    pub l_prime: usize,
    pub input_norm: InputNorm,
    pub delay_unit_scale: f64,
    pub variance_mode: VarianceMode,
    pub format_version: u32,
}

impl CadmModel {
    pub fn new(
        mlp: MlpParams,
        l_prime: usize,
        input_norm: InputNorm,
        delay_unit_scale: f64,
        variance_mode: VarianceMode,
    ) -> Result<Self> {
        let model = Self {
            mlp,
            l_prime,
            input_norm,
            delay_unit_scale,
            variance_mode,
            format_version: MODEL_FORMAT_VERSION,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_prime == 0 {
            return Err(Error::InvalidConfig("L' must be at least 1".into()));
        }
        if !(self.delay_unit_scale > 0.0 && self.delay_unit_scale.is_finite()) {
            return Err(Error::InvalidConfig("delay_unit_scale must be positive".into()));
        }
        if self.mlp.layers.is_empty() || self.mlp.input_width() != 2 {
            return Err(Error::InvalidConfig("network input width must be 2".into()));
        }
        for w in self.mlp.layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::InvalidConfig("inconsistent layer widths".into()));
            }
        }
        for l in &self.mlp.layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::InvalidConfig("bias length mismatch".into()));
            }
        }
        if self.mlp.output_width() != 4 * self.l_prime {
            return Err(Error::InvalidConfig(format!(
                "output width {} != 4·L' = {}",
                self.mlp.output_width(),
                4 * self.l_prime
            )));
        }
        if !self.mlp.all_finite()
            || self.input_norm.scale.iter().chain(&self.input_norm.offset).any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig("non-finite model parameters".into()));
        }
        if let VarianceMode::Fixed { var_theta, var_tau } = self.variance_mode {
            if !(var_theta > 0.0 && var_tau > 0.0) {
                return Err(Error::InvalidConfig("fixed variances must be positive".into()));
            }
        }
        Ok(())
    }

    /// Untrained model with random weights, normalized for `bounds`.
    pub fn initialize<R: Rng + ?Sized>(
        bounds: &Bounds,
        l_prime: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(4 * l_prime);
        Self::new(
            MlpParams::random(&dims, rng),
            l_prime,
            InputNorm::for_bounds(bounds),
            bounds.diagonal() / SPEED_OF_LIGHT,
            VarianceMode::Learned,
        )
    }

    fn input_matrix(&self, locs: &[Point2]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((locs.len(), 2));
        for (i, p) in locs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NumericFailure(format!("non-finite location {p:?}")));
            }
            let z = self.input_norm.apply(*p);
            x[[i, 0]] = z[0];
            x[[i, 1]] = z[1];
        }
        Ok(x)
    }

    fn decode_row(&self, raw: &[f64]) -> Result<Vec<GaussianPathDist>> {
        let u = self.delay_unit_scale;
        let dists: Vec<GaussianPathDist> = raw
            .chunks_exact(4)
            .map(|c| {
                let (var_theta, var_tau) = match self.variance_mode {
                    VarianceMode::Learned => (
                        c[1].exp() + VAR_FLOOR_ANGLE,
                        c[3].exp() * u * u + VAR_FLOOR_DELAY,
                    ),
                    VarianceMode::Fixed { var_theta, var_tau } => (var_theta, var_tau),
                };
                GaussianPathDist {
                    mu_theta: wrap_angle(c[0]),
                    var_theta,
                    mu_tau: c[2] * u,
                    var_tau,
                }
            })
            .collect();
        let finite = dists.iter().all(|d| {
            d.mu_theta.is_finite()
                && d.mu_tau.is_finite()
                && d.var_theta.is_finite()
                && d.var_tau.is_finite()
        });
        if !finite {
            return Err(Error::NumericFailure("non-finite network output".into()));
        }
        Ok(dists)
    }

    pub fn forward(&self, loc: Point2) -> Result<Vec<GaussianPathDist>> {
        self.forward_batch(&[loc]).map(|mut v| v.remove(0))
    }

    pub fn forward_batch(&self, locs: &[Point2]) -> Result<Vec<Vec<GaussianPathDist>>> {
        let x = self.input_matrix(locs)?;
        let out = self.mlp.forward(x.view());
        out.rows()
            .into_iter()
            .map(|r| self.decode_row(r.as_slice().expect("row-major")))
            .collect()
    }

    /// 4L'×2 matrix ∂(μθ, σ²θ, μτ, σ²τ per path)/∂(x, y) in physical units.
    pub fn jacobian(&self, loc: Point2) -> Result<Vec<[f64; 2]>> {
        self.evaluate(loc).map(|e| e.jacobian_rows())
    }

    fn evaluate_rows(&self, locs: &[Point2]) -> Result<Vec<Result<MapEvaluation>>> {
        let x = self.input_matrix(locs)?;
        let (out, tangents) = self.mlp.forward_with_tangents(x.view());
        let u = self.delay_unit_scale;
        let s = self.input_norm.scale;
        let learned = matches!(self.variance_mode, VarianceMode::Learned);
        let evals = (0..locs.len())
            .map(|i| {
                let raw = out.row(i);
                let dists = self.decode_row(raw.as_slice().expect("row-major"))?;
                let jacobian = (0..self.l_prime)
                    .map(|k| {
                        let grad = |j: usize, factor: f64| {
                            [
                                tangents[0][[i, 4 * k + j]] * s[0] * factor,
                                tangents[1][[i, 4 * k + j]] * s[1] * factor,
                            ]
                        };
                        let (dvt, dvd) = if learned {
                            (raw[4 * k + 1].exp(), raw[4 * k + 3].exp() * u * u)
                        } else {
                            (0.0, 0.0)
                        };
                        PathJacobian {
                            mu_theta: grad(0, 1.0),
                            var_theta: grad(1, dvt),
                            mu_tau: grad(2, u),
                            var_tau: grad(3, dvd),
                        }
                    })
                    .collect();
                Ok(MapEvaluation { dists, jacobian })
            })
            .collect();
        Ok(evals)
    }
}

impl AngleDelayMap for CadmModel {
    fn l_prime(&self) -> usize {
        self.l_prime
    }

    fn predict(&self, loc: Point2) -> Result<Vec<GaussianPathDist>> {
        self.forward(loc)
    }

    fn evaluate(&self, loc: Point2) -> Result<MapEvaluation> {
        self.evaluate_rows(&[loc])?.remove(0)
    }

    fn evaluate_batch(&self, locs: &[Point2]) -> Vec<Result<MapEvaluation>> {
        // non-finite inputs fail the whole batch; redo point by point
        match self.evaluate_rows(locs) {
            Ok(v) => v,
            Err(_) => locs.iter().map(|&l| self.evaluate(l)).collect(),
        }
    }

    fn predict_batch(&self, locs: &[Point2]) -> Vec<Result<Vec<GaussianPathDist>>> {
        match self.forward_batch(locs) {
            Ok(v) => v.into_iter().map(Ok).collect(),
            Err(_) => locs.iter().map(|&l| self.forward(l)).collect(),
        }
    }
}

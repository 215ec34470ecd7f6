use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Adam, MlpParams};
use super::{CadmModel, VarianceMode, DEFAULT_HIDDEN, VAR_FLOOR_ANGLE, VAR_FLOOR_DELAY};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Bounds, CommChannelKnowledge, Point2};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub location: Point2,
    pub truth: CommChannelKnowledge,
}

/// Historical (location, channel) pairs from one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub bounds: Bounds,
    pub samples: Vec<TrainingSample>,
}

impl TrainingSet {
    pub fn new(bounds: Bounds, samples: Vec<TrainingSample>) -> Result<Self> {
        let set = Self { bounds, samples };
        set.l_prime()?;
        Ok(set)
    }

    /// Shared path count of all samples.
    pub fn l_prime(&self) -> Result<usize> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::NoData("training set is empty".into()))?
            .truth
            .l_prime();
        for s in &self.samples {
            if s.truth.l_prime() != first {
                return Err(Error::PathCountMismatch {
                    expected: first,
                    found: s.truth.l_prime(),
                });
            }
        }
        Ok(first)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Joint Gaussian negative log-likelihood over means and variances.
    GaussianNll,
    /// Squared error on means only; the model reports the given variances.
    MseOnMeans { var_theta: f64, var_tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch (cosine schedule).
    pub final_learning_rate: f64,
    /// Fraction of samples kept out of training for error reporting.
    pub holdout_fraction: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            holdout_fraction: 0.1,
            loss: LossKind::GaussianNll,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig("holdout_fraction must be in [0, 1)".into()));
        }
        if let LossKind::MseOnMeans { var_theta, var_tau } = self.loss {
            if !(var_theta > 0.0 && var_tau > 0.0) {
                return Err(Error::InvalidConfig("fixed variances must be positive".into()));
            }
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let (hi, lo) = (self.learning_rate, self.final_learning_rate);
        lo + 0.5 * (hi - lo) * (1.0 + (PI * t).cos())
    }
}

/// Mean absolute errors of predicted means.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HoldoutErrors {
    pub samples: usize,
    pub angle_mae_rad: f64,
    pub delay_mae_s: f64,
    pub angle_median_rad: f64,
    pub delay_median_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub holdout: HoldoutErrors,
    pub train_errors: HoldoutErrors,
}

fn to_matrices(
    samples: &[&TrainingSample],
    model: &CadmModel,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let lp = model.l_prime;
    let mut x = Array2::zeros((samples.len(), 2));
    let mut y = Array2::zeros((samples.len(), 2 * lp));
    for (i, s) in samples.iter().enumerate() {
        let z = model.input_norm.apply(s.location);
        x[[i, 0]] = z[0];
        x[[i, 1]] = z[1];
        for (k, p) in s.truth.paths().iter().enumerate() {
            y[[i, 2 * k]] = p.aod_rad;
            y[[i, 2 * k + 1]] = p.delay_s / model.delay_unit_scale;
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite training data".into()));
    }
    Ok((x, y))
}

/// Loss of a batch and its gradient with respect to raw network outputs.
fn loss_and_grad(raw: &Array2<f64>, y: &Array2<f64>, loss: LossKind, delay_floor: f64) -> (f64, Array2<f64>) {
    let n = raw.nrows();
    let lp = y.ncols() / 2;
    let mut grad = Array2::zeros(raw.raw_dim());
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for k in 0..lp {
            let c = |j: usize| raw[[i, 4 * k + j]];
            let r_theta = wrap_angle(y[[i, 2 * k]] - c(0));
            let r_tau = y[[i, 2 * k + 1]] - c(2);
            match loss {
                LossKind::GaussianNll => {
                    for (r, mu_col, lv_col, floor) in [
                        (r_theta, 0, 1, VAR_FLOOR_ANGLE),
                        (r_tau, 2, 3, delay_floor),
                    ] {
                        let e = c(lv_col).exp();
                        let v = e + floor;
                        total += HALF_LN_2PI + 0.5 * (v.ln() + r * r / v);
                        grad[[i, 4 * k + mu_col]] = -r / v * inv_n;
                        grad[[i, 4 * k + lv_col]] = 0.5 * (1.0 / v - r * r / (v * v)) * e * inv_n;
                    }
                }
                LossKind::MseOnMeans { .. } => {
                    total += r_theta * r_theta + r_tau * r_tau;
                    grad[[i, 4 * k]] = -2.0 * r_theta * inv_n;
                    grad[[i, 4 * k + 2]] = -2.0 * r_tau * inv_n;
                }
            }
        }
    }
    (total * inv_n, grad)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean-prediction errors of `model` on `samples`.
pub fn prediction_errors(model: &CadmModel, samples: &[&TrainingSample]) -> Result<HoldoutErrors> {
    if samples.is_empty() {
        return Ok(HoldoutErrors::default());
    }
    let locs: Vec<Point2> = samples.iter().map(|s| s.location).collect();
    let pred = model.forward_batch(&locs)?;
    let mut angle = Vec::with_capacity(samples.len() * model.l_prime);
    let mut delay = Vec::with_capacity(samples.len() * model.l_prime);
    for (s, p) in samples.iter().zip(&pred) {
        for (t, d) in s.truth.paths().iter().zip(p) {
            angle.push(wrap_angle(d.mu_theta - t.aod_rad).abs());
            delay.push((d.mu_tau - t.delay_s).abs());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(HoldoutErrors {
        samples: samples.len(),
        angle_mae_rad: mean(&angle),
        delay_mae_s: mean(&delay),
        angle_median_rad: median(&mut angle),
        delay_median_s: median(&mut delay),
    })
}

/// Fit a map to `data`. Deterministic for a given `seed`.
///
/// The last `holdout_fraction` of a seeded permutation of the samples is
/// held out; epoch losses are means over the training part.
pub fn train(data: &TrainingSet, config: &TrainConfig, seed: u64) -> Result<(CadmModel, TrainReport)> {
    config.validate()?;
    let l_prime = data.l_prime()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut model = CadmModel::initialize(&data.bounds, l_prime, &config.hidden, &mut rng)?;
    if let LossKind::MseOnMeans { var_theta, var_tau } = config.loss {
        model.variance_mode = VarianceMode::Fixed { var_theta, var_tau };
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((data.len() as f64) * config.holdout_fraction).floor() as usize;
    let n_train = data.len() - n_hold;
    if n_train == 0 {
        return Err(Error::NoData("no samples left for training".into()));
    }
    let train_refs: Vec<&TrainingSample> = order[..n_train].iter().map(|&i| &data.samples[i]).collect();
    let hold_refs: Vec<&TrainingSample> = order[n_train..].iter().map(|&i| &data.samples[i]).collect();
    let (x, y) = to_matrices(&train_refs, &model)?;

    init_output_head(&mut model.mlp, &y);

    let delay_floor = VAR_FLOOR_DELAY / (model.delay_unit_scale * model.delay_unit_scale);
    let mut adam = Adam::new(&model.mlp);
    let mut idx: Vec<usize> = (0..n_train).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in idx.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let (raw, cache) = model.mlp.forward_train(xb.view());
            let (loss, grad) = loss_and_grad(&raw, &yb, config.loss, delay_floor);
            if !loss.is_finite() {
                return Err(Error::TrainingFailure { epoch, loss });
            }
            sum += loss * chunk.len() as f64;
            let g = model.mlp.backward(&cache, grad);
            adam.step(&mut model.mlp, &g, lr);
        }
        let epoch_loss = sum / n_train as f64;
        if !epoch_loss.is_finite() || !model.mlp.all_finite() {
            return Err(Error::TrainingFailure {
                epoch,
                loss: epoch_loss,
            });
        }
        epoch_losses.push(epoch_loss);
    }

    let holdout = prediction_errors(&model, &hold_refs)?;
    let train_errors = prediction_errors(&model, &train_refs)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            holdout,
            train_errors,
        },
    ))
}

/// Start the linear head at the per-output sample mean (and log-variance).
fn init_output_head(mlp: &mut MlpParams, y: &Array2<f64>) {
    let head = mlp.layers.last_mut().expect("at least one layer");
    let lp = y.ncols() / 2;
    let n = y.nrows() as f64;
    for k in 0..lp {
        for (j, col) in [(0usize, 2 * k), (2, 2 * k + 1)] {
            let c = y.column(col);
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            head.bias[4 * k + j] = mean;
            head.bias[4 * k + j + 1] = var.max(1e-6).ln();
        }
    }
}

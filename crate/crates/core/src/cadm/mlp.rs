//! Dense feed-forward network with leaky-rectifier hidden layers and a linear head.
//!
//! Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Negative-side slope of the hidden-layer activation.
pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    /// He-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for layer in &mut p.layers {
            let limit = (6.0 / layer.inputs() as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            layer.weight.mapv_inplace(|_| dist.sample(rng));
        }
        p
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(Dense::outputs));
        d
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn affine(layer: &Dense, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    /// Batch forward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &h.view());
            if i < last {
                z.mapv_inplace(leaky);
            }
            h = z;
        }
        h
    }

    /// Forward pass plus the derivative of every output with respect to every
    /// input coordinate. Returns `(outputs n×m, tangents)` where `tangents[d]`
    /// is the n×m matrix ∂outputs/∂x_d.
    pub fn forward_with_tangents(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let n = x.nrows();
        let d_in = x.ncols();
        let last = self.layers.len() - 1;

        // Tangent rows for all input directions stacked: row (d*n + i).
        let first = &self.layers[0];
        let mut z = Self::affine(first, &x);
        let mut t = Array2::<f64>::zeros((d_in * n, first.outputs()));
        for d in 0..d_in {
            let col = first.weight.column(d);
            t.slice_mut(ndarray::s![d * n..(d + 1) * n, ..])
                .assign(&col.broadcast((n, first.outputs())).expect("broadcast"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                z = Self::affine(layer, &z.view());
                t = t.dot(&layer.weight.t());
            }
            if i < last {
                for d in 0..d_in {
                    let mut td = t.slice_mut(ndarray::s![d * n..(d + 1) * n, ..]);
                    Zip::from(&mut td).and(&z).for_each(|tv, &zv| *tv *= leaky_grad(zv));
                }
                z.mapv_inplace(leaky);
            }
        }
        let tangents = (0..d_in)
            .map(|d| t.slice(ndarray::s![d * n..(d + 1) * n, ..]).to_owned())
            .collect();
        (z, tangents)
    }

    /// Forward pass retaining what [`MlpParams::backward`] needs.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &h.view());
            inputs.push(h);
            if i < last {
                h = z.mapv(leaky);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Gradients of a scalar loss with respect to all parameters, given
    /// ∂loss/∂outputs for the batch. Layout matches `self.layers`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: Array2<f64>) -> MlpParams {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weight = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            if i > 0 {
                let mut back = delta.dot(&layer.weight);
                Zip::from(&mut back)
                    .and(&cache.pre[i - 1])
                    .for_each(|b, &z| *b *= leaky_grad(z));
                delta = back;
            }
        }
        grads.reverse();
        MlpParams { layers: grads }
    }
}

/// Adam optimizer state over an [`MlpParams`].
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &MlpParams) -> Self {
        let dims = params.dims();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: MlpParams::zeros(&dims),
            v: MlpParams::zeros(&dims),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

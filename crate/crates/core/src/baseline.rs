//! Unconstrained ReLU network trained with binary cross-entropy. It has the
//! same layer shapes as a [`crate::LipNet`] but no weight projection, and
//! serves as the comparison point for local Lipschitz constants.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

struct Trace {
    /// Input to each layer, one row per sample.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
}

impl MlpNet {
    /// He-initialized `input_dim → hidden… → 1` ReLU network.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(input_dim, hidden, |rows, cols| {
            let std = (2.0 / cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
        })
    }

    /// All weights and biases zero.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        Self::build(input_dim, hidden, |rows, cols| Array2::zeros((rows, cols)))
    }

    fn build(input_dim: usize, hidden: &[usize], mut init: impl FnMut(usize, usize) -> Array2<f64>) -> Result<Self> {
        if input_dim == 0 || hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &w in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer { weights: init(w, prev), bias: Array1::zeros(w) });
            prev = w;
        }
        Ok(Self { input_dim, layers })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let mut prev = input_dim;
        for l in &layers {
            if l.weights.ncols() != prev || l.bias.len() != l.weights.nrows() {
                return Err(Error::DimensionMismatch { expected: prev, got: l.weights.ncols() });
            }
            prev = l.weights.nrows();
        }
        if layers.is_empty() || prev != 1 {
            return Err(Error::Config("baseline network must end in a single output".into()));
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: p.len() });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            for (w, v) in l.weights.iter_mut().zip(&p[off..off + n]) {
                *w = *v;
            }
            off += n;
            let m = l.bias.len();
            l.bias.assign(&ArrayView1::from(&p[off..off + m]));
            off += m;
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Trace)> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.ncols() });
        }
        let mut act = x.to_owned();
        let mut trace = Trace { inputs: Vec::new(), pre: Vec::new() };
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = act.dot(&l.weights.t());
            pre += &l.bias;
            let next = if i == last { pre.clone() } else { pre.mapv(|v| v.max(0.0)) };
            trace.inputs.push(act);
            trace.pre.push(pre);
            act = next;
        }
        Ok((act.column(0).to_owned(), trace))
    }

    /// Returns input gradients and per-layer (weight, bias) gradients.
    fn backward(&self, trace: &Trace, upstream: ArrayView1<f64>) -> (Array2<f64>, Vec<DenseLayer>) {
        let n = upstream.len();
        let mut grad = upstream.to_owned().into_shape_with_order((n, 1)).expect("column");
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                grad.zip_mut_with(&trace.pre[i], |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads.push(DenseLayer { weights: grad.t().dot(&trace.inputs[i]), bias: grad.sum_axis(ndarray::Axis(0)) });
            grad = grad.dot(&self.layers[i].weights);
        }
        grads.reverse();
        (grad, grads)
    }

    pub fn score_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub fn input_gradient_batch(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let (s, trace) = self.forward(x)?;
        let ones = Array1::ones(s.len());
        let (g, _) = self.backward(&trace, ones.view());
        Ok((s, g))
    }

    pub fn value_and_param_gradients<F>(&self, batch: ArrayView2<f64>, loss: F) -> Result<(f64, Array1<f64>, Vec<f64>)>
    where
        F: FnOnce(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    {
        let (s, trace) = self.forward(batch)?;
        let (value, upstream) = loss(s.view())?;
        let (_, grads) = self.backward(&trace, upstream.view());
        let mut flat = Vec::with_capacity(self.num_params());
        for g in &grads {
            flat.extend(g.weights.iter());
            flat.extend(g.bias.iter());
        }
        Ok((value, s, flat))
    }

    pub fn to_descriptor(&self) -> MlpDescriptor {
        MlpDescriptor {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| MlpLayerDescriptor {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_descriptor(d: &MlpDescriptor) -> Result<Self> {
        let layers = d
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    weights: Array2::from_shape_vec((l.rows, l.cols), l.weights.clone())
                        .map_err(|e| Error::Config(format!("layer weights: {e}")))?,
                    bias: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(d.input_dim, layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpLayerDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDescriptor {
    pub input_dim: usize,
    pub layers: Vec<MlpLayerDescriptor>,
}

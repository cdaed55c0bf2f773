//! 1-Lipschitz feed-forward networks.
//!
//! Every dense layer stores unconstrained raw weights and evaluates with their
//! orthogonal projection, so each affine map is norm non-expanding. Sorting
//! activations are permutations. The composition is therefore 1-Lipschitz in
//! l2 and piecewise affine.

pub mod activation;
pub mod bjorck;

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use activation::{group_sort, Activation};
pub use bjorck::{
    bjorck_project, bjorck_project_tape, orthogonality_residual, orthonormalize, spectral_norm_upper, BjorckTape,
    Projection, DEFAULT_BJORCK_ITERATIONS,
};

use crate::error::{Error, Result};

/// Dense layer `x ↦ Π(W)·x + b` with `Π` the Björck projection.
#[derive(Debug, Clone)]
pub struct OrthoDense {
    raw_weights: Array2<f64>,
    bias: Array1<f64>,
    bjorck_iterations: usize,
    version: u64,
    projected: OnceLock<Array2<f64>>,
    /// When set, the projection is computed with its tape and both are kept,
    /// so a forward pass and a gradient step on the same weights share work.
    keep_tape: bool,
    taped: OnceLock<(Array2<f64>, BjorckTape)>,
}

impl OrthoDense {
    pub fn new(raw_weights: Array2<f64>, bias: Array1<f64>, bjorck_iterations: usize) -> Result<Self> {
        if raw_weights.is_empty() {
            return Err(Error::Config("layer weights must be non-empty".into()));
        }
        if bias.len() != raw_weights.nrows() {
            return Err(Error::DimensionMismatch { expected: raw_weights.nrows(), got: bias.len() });
        }
        if bjorck_iterations == 0 {
            return Err(Error::Config("bjorck_iterations must be at least 1".into()));
        }
        Ok(Self {
            raw_weights,
            bias,
            bjorck_iterations,
            version: 0,
            projected: OnceLock::new(),
            keep_tape: false,
            taped: OnceLock::new(),
        })
    }

    /// Random layer with orthonormal rows (or columns) and zero bias.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, bjorck_iterations: usize, rng: &mut R) -> Result<Self> {
        let gauss = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
        Self::new(bjorck::orthonormalize(gauss), Array1::zeros(rows), bjorck_iterations)
    }

    pub fn rows(&self) -> usize {
        self.raw_weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.raw_weights.ncols()
    }

    pub fn raw_weights(&self) -> &Array2<f64> {
        &self.raw_weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn bjorck_iterations(&self) -> usize {
        self.bjorck_iterations
    }

    /// Incremented on every raw-weight mutation; keys the projection cache.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_raw_weights(&mut self, w: Array2<f64>) -> Result<()> {
        if w.dim() != self.raw_weights.dim() {
            return Err(Error::DimensionMismatch { expected: self.raw_weights.len(), got: w.len() });
        }
        self.raw_weights = w;
        self.invalidate();
        Ok(())
    }

    pub fn set_bias(&mut self, b: Array1<f64>) -> Result<()> {
        if b.len() != self.bias.len() {
            return Err(Error::DimensionMismatch { expected: self.bias.len(), got: b.len() });
        }
        self.bias = b;
        Ok(())
    }

    pub fn set_bjorck_iterations(&mut self, iterations: usize) {
        self.bjorck_iterations = iterations.max(1);
        self.invalidate();
    }

    fn invalidate(&mut self) {
        self.version += 1;
        self.projected = OnceLock::new();
        self.taped = OnceLock::new();
    }

    /// Keeps the Björck tape alongside the cached projection. Used during
    /// training; costs one copy of every iterate per layer.
    pub fn set_keep_tape(&mut self, on: bool) {
        self.keep_tape = on;
        if !on {
            self.taped = OnceLock::new();
        }
    }

    fn taped(&self) -> &(Array2<f64>, BjorckTape) {
        self.taped.get_or_init(|| bjorck_project_tape(self.raw_weights.view(), self.bjorck_iterations))
    }

    /// Projected weights, computed on first use after a mutation.
    pub fn projected(&self) -> &Array2<f64> {
        if self.keep_tape {
            return &self.taped().0;
        }
        self.projected.get_or_init(|| bjorck_project(self.raw_weights.view(), self.bjorck_iterations).theta)
    }

    pub fn residual(&self) -> f64 {
        orthogonality_residual(self.projected().view())
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub dense: OrthoDense,
    pub activation: Activation,
}

/// Sequence of projected dense layers and activations with scalar output.
#[derive(Debug, Clone)]
pub struct LipNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Per-layer record of a batched forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Pre-activations, one row per sample.
    pub pre: Array2<f64>,
    /// For each output slot, the pre-activation column it was taken from.
    pub perm: Option<Array2<u32>>,
    /// Post-activation values.
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn scores(&self) -> Array1<f64> {
        self.layers.last().map(|l| l.out.column(0).to_owned()).unwrap_or_default()
    }

    /// Recomputes the output from the recorded input and permutations.
    pub fn replay(&self, net: &LipNet) -> Result<Array1<f64>> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::DimensionMismatch { expected: net.layers.len(), got: self.layers.len() });
        }
        let mut act = self.input.clone();
        for (layer, rec) in net.layers.iter().zip(&self.layers) {
            let pre = affine(&act, layer.dense.projected(), layer.dense.bias());
            act = match &rec.perm {
                None => pre,
                Some(perm) => {
                    let mut out = Array2::zeros(pre.dim());
                    for ((mut o, p), src) in out.rows_mut().into_iter().zip(pre.rows()).zip(perm.rows()) {
                        for (slot, &s) in o.iter_mut().zip(src.iter()) {
                            *slot = p[s as usize];
                        }
                    }
                    out
                }
            };
        }
        Ok(act.column(0).to_owned())
    }
}

#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of a batch loss with respect to every layer's raw weights and bias.
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub layers: Vec<LayerGradient>,
}

impl NetGradients {
    /// Flattened in the same order as [`LipNet::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

fn affine(x: &Array2<f64>, theta: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let mut pre = x.dot(&theta.t());
    pre += bias;
    pre
}

impl LipNet {
    /// Builds `input_dim → hidden[0] → … → hidden[k-1] → 1` with the given
    /// activation on every hidden layer and orthonormal initialization.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        bjorck_iterations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &w in hidden {
            activation.group_len(w)?;
            layers.push(Layer { dense: OrthoDense::random(w, prev, bjorck_iterations, rng)?, activation });
            prev = w;
        }
        layers.push(Layer {
            dense: OrthoDense::random(1, prev, bjorck_iterations, rng)?,
            activation: Activation::Identity,
        });
        Self::from_layers(input_dim, layers)
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        if last.dense.rows() != 1 {
            return Err(Error::Config(format!("last layer must have one output, has {}", last.dense.rows())));
        }
        let mut prev = input_dim;
        for l in &layers {
            if l.dense.cols() != prev {
                return Err(Error::DimensionMismatch { expected: prev, got: l.dense.cols() });
            }
            l.activation.group_len(l.dense.rows())?;
            prev = l.dense.rows();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.dense.raw_weights.len() + l.dense.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.dense.raw_weights.iter());
            out.extend(l.dense.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: p.len() });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (r, c) = l.dense.raw_weights.dim();
            let w = Array2::from_shape_vec((r, c), p[off..off + r * c].to_vec()).expect("shape");
            off += r * c;
            let b = Array1::from(p[off..off + r].to_vec());
            off += r;
            l.dense.set_raw_weights(w)?;
            l.dense.set_bias(b)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.ncols() });
        }
        Ok(())
    }

    fn run_forward(&self, thetas: &[&Array2<f64>], x: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(&x)?;
        let input = x.as_standard_layout().to_owned();
        let mut records: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (i, (layer, theta)) in self.layers.iter().zip(thetas).enumerate() {
            let prev = if i == 0 { &input } else { &records[i - 1].out };
            let pre = affine(prev, theta, layer.dense.bias());
            let rec = match layer.activation.group_len(pre.ncols())? {
                None => LayerTrace { out: pre.clone(), pre, perm: None },
                Some(g) => {
                    let mut out = Array2::zeros(pre.dim());
                    let mut perm = Array2::<u32>::zeros(pre.dim());
                    for ((p, mut o), mut pm) in pre.rows().into_iter().zip(out.rows_mut()).zip(perm.rows_mut()) {
                        activation::sort_groups_into(
                            p.as_slice().expect("row-major"),
                            g,
                            o.as_slice_mut().expect("row-major"),
                            pm.as_slice_mut().expect("row-major"),
                        );
                    }
                    LayerTrace { pre, perm: Some(perm), out }
                }
            };
            records.push(rec);
        }
        Ok(ForwardTrace { input, layers: records })
    }

    fn cached_thetas(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().map(|l| l.dense.projected()).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardTrace)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let trace = self.forward_batch(view)?;
        Ok((trace.scores()[0], trace))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardTrace> {
        let thetas = self.cached_thetas();
        self.run_forward(&thetas, x)
    }

    pub fn score_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_batch(x)?.scores())
    }

    /// Propagates `upstream` (one value per sample, the loss gradient with
    /// respect to each score) back through a recorded pass. Returns the input
    /// gradients and the gradients with respect to the projected weights.
    fn backward(
        &self,
        thetas: &[&Array2<f64>],
        trace: &ForwardTrace,
        upstream: ArrayView1<f64>,
        want_params: bool,
    ) -> (Array2<f64>, Vec<LayerGradient>) {
        let n = trace.input.nrows();
        let mut grad = upstream.to_owned().into_shape_with_order((n, 1)).expect("column");
        let mut param_grads = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer_in = if i == 0 { &trace.input } else { &trace.layers[i - 1].out };
            if want_params {
                param_grads.push(LayerGradient { weights: grad.t().dot(layer_in), bias: bjorck::column_sums(&grad) });
            }
            let grad_in = grad.dot(thetas[i]);
            grad = if i == 0 {
                grad_in
            } else {
                match &trace.layers[i - 1].perm {
                    None => grad_in,
                    Some(perm) => {
                        let mut g = Array2::zeros(grad_in.dim());
                        for ((mut gr, gi), pm) in g.rows_mut().into_iter().zip(grad_in.rows()).zip(perm.rows()) {
                            for (&src, &v) in pm.iter().zip(gi.iter()) {
                                gr[src as usize] = v;
                            }
                        }
                        g
                    }
                }
            };
        }
        param_grads.reverse();
        (grad, param_grads)
    }

    pub fn input_gradient(&self, x: &[f64]) -> Result<Array1<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (_, g) = self.input_gradient_batch(view)?;
        Ok(g.row(0).to_owned())
    }

    /// Scores and input gradients for every row of `x`.
    pub fn input_gradient_batch(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let thetas = self.cached_thetas();
        let trace = self.run_forward(&thetas, x)?;
        let ones = Array1::ones(trace.input.nrows());
        let (g, _) = self.backward(&thetas, &trace, ones.view(), false);
        Ok((trace.scores(), g))
    }

    /// Gradient of `Σᵢ upstream[i]·f(batch[i])` with respect to the raw
    /// weights and biases, differentiating through the unrolled projection.
    pub fn param_gradients(&self, batch: ArrayView2<f64>, upstream: ArrayView1<f64>) -> Result<NetGradients> {
        if upstream.len() != batch.nrows() {
            return Err(Error::DimensionMismatch { expected: batch.nrows(), got: upstream.len() });
        }
        let up = upstream.to_owned();
        let (_, _, g) = self.value_and_param_gradients(batch, |_| Ok((0.0, up.clone())))?;
        Ok(g)
    }

    /// Evaluates the batch, lets `loss` turn the scores into a loss value and
    /// per-sample score gradients, and backpropagates those to the raw
    /// parameters. One projection per layer is computed with its tape.
    pub fn value_and_param_gradients<F>(
        &self,
        batch: ArrayView2<f64>,
        loss: F,
    ) -> Result<(f64, Array1<f64>, NetGradients)>
    where
        F: FnOnce(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    {
        let fresh: Vec<Option<(Array2<f64>, BjorckTape)>> = self
            .layers
            .iter()
            .map(|l| {
                (!l.dense.keep_tape).then(|| bjorck_project_tape(l.dense.raw_weights.view(), l.dense.bjorck_iterations))
            })
            .collect();
        let taped: Vec<&(Array2<f64>, BjorckTape)> =
            self.layers.iter().zip(&fresh).map(|(l, f)| f.as_ref().unwrap_or_else(|| l.dense.taped())).collect();
        let thetas: Vec<&Array2<f64>> = taped.iter().map(|(t, _)| t).collect();
        let trace = self.run_forward(&thetas, batch)?;
        let scores = trace.scores();
        let (value, upstream) = loss(scores.view())?;
        if upstream.len() != scores.len() {
            return Err(Error::DimensionMismatch { expected: scores.len(), got: upstream.len() });
        }
        let (_, theta_grads) = self.backward(&thetas, &trace, upstream.view(), true);
        let layers = theta_grads
            .into_iter()
            .zip(&taped)
            .map(|(g, (_, tape))| LayerGradient { weights: tape.backward(g.weights.view()), bias: g.bias })
            .collect();
        Ok((value, scores, NetGradients { layers }))
    }

    /// Largest orthogonality residual over all layers.
    pub fn max_residual(&self) -> f64 {
        self.layers.iter().map(|l| l.dense.residual()).fold(0.0, f64::max)
    }

    /// Serializable description of the architecture and raw parameters.
    pub fn to_descriptor(&self) -> LipNetDescriptor {
        LipNetDescriptor {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| DenseDescriptor {
                    rows: l.dense.rows(),
                    cols: l.dense.cols(),
                    activation: l.activation,
                    bjorck_iterations: l.dense.bjorck_iterations,
                    weights: l.dense.raw_weights.iter().copied().collect(),
                    bias: l.dense.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_descriptor(d: &LipNetDescriptor) -> Result<Self> {
        let layers = d
            .layers
            .iter()
            .map(|l| {
                let w = Array2::from_shape_vec((l.rows, l.cols), l.weights.clone())
                    .map_err(|e| Error::Config(format!("layer weights: {e}")))?;
                Ok(Layer {
                    dense: OrthoDense::new(w, Array1::from(l.bias.clone()), l.bjorck_iterations)?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(d.input_dim, layers)
    }
}

/// Row-major raw parameters of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub bjorck_iterations: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipNetDescriptor {
    pub input_dim: usize,
    pub layers: Vec<DenseDescriptor>,
}

/// l2 norm of each row.
pub fn row_norms(m: &Array2<f64>) -> Array1<f64> {
    m.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_net(w: Array2<f64>) -> LipNet {
        let bias = Array1::zeros(w.nrows());
        LipNet::from_layers(
            w.ncols(),
            vec![Layer { dense: OrthoDense::new(w, bias, 15).unwrap(), activation: Activation::Identity }],
        )
        .unwrap()
    }

    fn random_net(seed: u64, width: usize, depth: usize) -> LipNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net =
            LipNet::new(3, &vec![width; depth], Activation::GroupSort { group_size: 2 }, 15, &mut rng).unwrap();
        // Move away from the orthonormal initialization so the projection does work.
        let mut p = net.params();
        for v in p.iter_mut() {
            *v += 0.2 * rng.random::<f64>() - 0.1;
        }
        net.set_params(&p).unwrap();
        net
    }

    #[test]
    fn single_linear_layer() {
        let net = linear_net(array![[1.0, 0.0]]);
        let (s, _) = net.forward(&[3.0, 4.0]).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        let g = net.input_gradient(&[3.0, 4.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn hand_traced_groupsort_net() {
        let r = 1.0 / 2f64.sqrt();
        let net = LipNet::from_layers(
            2,
            vec![
                Layer {
                    dense: OrthoDense::new(Array2::eye(2), Array1::zeros(2), 15).unwrap(),
                    activation: Activation::GroupSort { group_size: 2 },
                },
                Layer {
                    dense: OrthoDense::new(array![[r, r]], Array1::zeros(1), 15).unwrap(),
                    activation: Activation::Identity,
                },
            ],
        )
        .unwrap();
        let (s, _) = net.forward(&[3.0, 1.0]).unwrap();
        assert!((s - 4.0 / 2f64.sqrt()).abs() < 1e-12, "{s}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = linear_net(array![[1.0, 0.0]]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn last_layer_must_be_scalar() {
        let layer = Layer {
            dense: OrthoDense::new(Array2::eye(2), Array1::zeros(2), 15).unwrap(),
            activation: Activation::Identity,
        };
        assert!(LipNet::from_layers(2, vec![layer]).is_err());
    }

    #[test]
    fn trace_replay_is_bit_exact() {
        let net = random_net(3, 8, 2);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.7 + j as f64 * 0.3);
        let trace = net.forward_batch(x.view()).unwrap();
        let replay = trace.replay(&net).unwrap();
        assert_eq!(trace.scores(), replay);
    }

    #[test]
    fn lipschitz_on_random_pairs() {
        let net = random_net(11, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let d = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let fx = net.forward(&x).unwrap().0;
            let fy = net.forward(&y).unwrap().0;
            assert!((fx - fy).abs() <= d * (1.0 + 1e-3));
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = random_net(21, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probes = 200;
        let mut ok = 0;
        for _ in 0..probes {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = net.input_gradient(&x).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; 3];
            for k in 0..3 {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                fd[k] = (net.forward(&xp).unwrap().0 - net.forward(&xm).unwrap().0) / (2.0 * h);
            }
            let err = fd.iter().zip(g.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            if err / norm <= 1e-4 {
                ok += 1;
            }
            assert!(g.dot(&g).sqrt() <= 1.0 + 1e-3);
        }
        assert!(ok as f64 >= 0.95 * probes as f64, "{ok}/{probes}");
    }

    #[test]
    fn gradient_constant_on_small_segments() {
        let net = random_net(4, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut same = 0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + 1e-6 * b).collect();
            if net.input_gradient(&x).unwrap() == net.input_gradient(&y).unwrap() {
                same += 1;
            }
        }
        assert!(same >= 95, "{same}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(1, 8, 2);
        let x = Array2::from_elem((4, 3), 0.5);
        let g = net.param_gradients(x.view(), Array1::zeros(4).view()).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_sample_equals_doubled_upstream() {
        let net = random_net(2, 8, 2);
        let x = array![[0.3, -0.2, 1.1]];
        let xx = array![[0.3, -0.2, 1.1], [0.3, -0.2, 1.1]];
        let g1 = net.param_gradients(x.view(), array![2.0].view()).unwrap().flatten();
        let g2 = net.param_gradients(xx.view(), array![1.0, 1.0].view()).unwrap().flatten();
        assert_eq!(g1, g2);
    }

    #[test]
    fn raw_weight_gradient_through_projection_matches_fd() {
        let w = array![[0.8, -0.3, 0.5, 0.2]];
        let x = array![[1.0, 2.0, -0.5, 0.7]];
        let net = linear_net(w.clone());
        let g = net.param_gradients(x.view(), array![1.0].view()).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut wp = w.clone();
            wp[[0, j]] += h;
            let mut wm = w.clone();
            wm[[0, j]] -= h;
            let fd = (linear_net(wp).forward(&x.row(0).to_vec()).unwrap().0
                - linear_net(wm).forward(&x.row(0).to_vec()).unwrap().0)
                / (2.0 * h);
            let a = g.layers[0].weights[[0, j]];
            assert!((fd - a).abs() <= 1e-3 * fd.abs().max(1e-3), "{j}: fd={fd} analytic={a}");
        }
    }

    #[test]
    fn deep_param_gradient_matches_fd() {
        let net = random_net(8, 4, 2);
        let x = array![[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]];
        let up = array![0.7, -1.3];
        let g = net.param_gradients(x.view(), up.view()).unwrap().flatten();
        let loss = |n: &LipNet| -> f64 { n.score_batch(x.view()).unwrap().dot(&up) };
        let p = net.params();
        let h = 1e-6;
        let mut bad = 0;
        for k in 0..p.len() {
            let mut pp = p.clone();
            pp[k] += h;
            let mut pm = p.clone();
            pm[k] -= h;
            let mut np = net.clone();
            np.set_params(&pp).unwrap();
            let mut nm = net.clone();
            nm.set_params(&pm).unwrap();
            let fd = (loss(&np) - loss(&nm)) / (2.0 * h);
            if (fd - g[k]).abs() > 1e-3 * fd.abs().max(1e-2) {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
    }

    #[test]
    fn projection_cache_tracks_version() {
        let mut net = random_net(5, 4, 1);
        let v0 = net.layers()[0].dense.version();
        let before = net.score_batch(array![[1.0, 0.0, 0.0]].view()).unwrap();
        let mut p = net.params();
        p[0] += 0.5;
        net.set_params(&p).unwrap();
        assert!(net.layers()[0].dense.version() > v0);
        let after = net.score_batch(array![[1.0, 0.0, 0.0]].view()).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn descriptor_round_trip() {
        let net = random_net(6, 4, 2);
        let d = net.to_descriptor();
        let back = LipNet::from_descriptor(&d).unwrap();
        assert_eq!(back.to_descriptor(), d);
    }

    #[test]
    fn row_norms_helper() {
        let n = row_norms(&array![[3.0, 4.0], [0.0, 0.0]]);
        assert_eq!(n, array![5.0, 0.0]);
    }
}

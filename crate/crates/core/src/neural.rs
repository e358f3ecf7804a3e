//! Layered feed-forward networks with exact norm introspection.
//!
//! Weights are stored `out x in`; a batch is `n x in` and each layer computes
//! `A = phi(A_prev W^T + b)`. Training is plain SGD. Biases never enter a norm.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn cols(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// `sizes = [in, h1, ..., out]`, one activation per layer, Glorot-uniform
    /// weights and zero biases.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "network needs >= 2 positive sizes and one activation per layer".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-a..=a));
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Network { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let net = Network { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.b.len() != l.rows() {
                return Err(Error::DimensionMismatch {
                    expected: l.rows(),
                    got: l.b.len(),
                });
            }
            if i > 0 && self.layers[i - 1].rows() != l.cols() {
                return Err(Error::DimensionMismatch {
                    expected: self.layers[i - 1].rows(),
                    got: l.cols(),
                });
            }
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let xb = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        Ok(self.forward_batch(&xb)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_batch_from(0, x)
    }

    /// Run layers `start..` on a batch whose width matches layer `start`'s input.
    pub fn forward_batch_from(&self, start: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
        let first = self
            .layers
            .get(start)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {start}")))?;
        if x.ncols() != first.cols() {
            return Err(Error::DimensionMismatch {
                expected: first.cols(),
                got: x.ncols(),
            });
        }
        let mut a = x.clone();
        for l in &self.layers[start..] {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            z.mapv_inplace(|v| l.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Exact reverse-mode gradients for one input given `dL/d(output)`.
    pub fn backward(&self, x: &[f64], dloss_dout: &[f64]) -> Result<Gradients> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if dloss_dout.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: dloss_dout.len(),
            });
        }
        let xb = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        let d = Array2::from_shape_vec((1, dloss_dout.len()), dloss_dout.to_vec()).expect("shape");
        let cache = self.forward_cached(&Inputs::Dense(xb.clone()), None);
        Ok(self.backward_cached(&cache, d, Some(&xb)))
    }

    fn forward_cached(&self, inputs: &Inputs, rows: Option<&[usize]>) -> Cache {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = if i == 0 {
                inputs.times_wt(&l.w, rows)
            } else {
                post[i - 1].dot(&l.w.t())
            };
            z += &l.b;
            let a = z.mapv(|v| l.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        Cache { pre, post }
    }

    /// Gradients of a batch; `x0` is the dense layer-0 input when available
    /// (sparse inputs get their layer-0 weight gradient from [`sparse_w0_grad`]).
    fn backward_cached(&self, cache: &Cache, mut delta: Array2<f64>, x0: Option<&Array2<f64>>) -> Gradients {
        let n = self.layers.len();
        let mut dw = vec![Array2::zeros((0, 0)); n];
        let mut db = vec![Array1::zeros(0); n];
        let mut dz0 = Array2::zeros((0, 0));
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let mut dz = delta;
            ndarray::Zip::from(&mut dz)
                .and(&cache.pre[i])
                .and(&cache.post[i])
                .for_each(|d, &z, &a| *d *= l.activation.derivative(z, a));
            db[i] = dz.sum_axis(Axis(0));
            if i > 0 {
                dw[i] = dz.t().dot(&cache.post[i - 1]);
                delta = dz.dot(&l.w);
            } else {
                if let Some(x) = x0 {
                    dw[0] = dz.t().dot(x);
                }
                dz0 = dz;
                break;
            }
        }
        Gradients { dw, db, dz0 }
    }

    pub fn to_record(&self, meta: serde_json::Map<String, serde_json::Value>) -> NetworkRecord {
        NetworkRecord {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.rows(),
                    cols: l.cols(),
                    weights: l.w.iter().copied().collect(),
                    bias: l.b.to_vec(),
                    activation: l.activation,
                })
                .collect(),
            meta,
        }
    }

    pub fn from_record(rec: &NetworkRecord) -> Result<Self> {
        let layers = rec
            .layers
            .iter()
            .map(|l| {
                let w = Array2::from_shape_vec((l.rows, l.cols), l.weights.clone()).map_err(|_| Error::DimensionMismatch {
                    expected: l.rows * l.cols,
                    got: l.weights.len(),
                })?;
                Ok(Layer {
                    w,
                    b: Array1::from(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_layers(layers)
    }
}

struct Cache {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

/// Per-layer weight and bias gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
    dz0: Array2<f64>,
}

/// Network inputs: dense rows, or sparse rows of `(column, value)` pairs.
#[derive(Clone, Debug)]
pub enum Inputs {
    Dense(Array2<f64>),
    Sparse { dim: usize, rows: Vec<Vec<(usize, f64)>> },
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Dense(x) => x.nrows(),
            Inputs::Sparse { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Inputs::Dense(x) => x.ncols(),
            Inputs::Sparse { dim, .. } => *dim,
        }
    }

    fn select_dense(&self, rows: Option<&[usize]>) -> Option<Array2<f64>> {
        match self {
            Inputs::Dense(x) => Some(match rows {
                Some(r) => x.select(Axis(0), r),
                None => x.clone(),
            }),
            Inputs::Sparse { .. } => None,
        }
    }

    fn times_wt(&self, w: &Array2<f64>, rows: Option<&[usize]>) -> Array2<f64> {
        match self {
            Inputs::Dense(x) => match rows {
                Some(r) => x.select(Axis(0), r).dot(&w.t()),
                None => x.dot(&w.t()),
            },
            Inputs::Sparse { rows: sr, .. } => {
                let idx: Vec<usize> = rows.map(<[usize]>::to_vec).unwrap_or_else(|| (0..sr.len()).collect());
                let mut z = Array2::zeros((idx.len(), w.nrows()));
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = z.row_mut(k);
                    for &(c, v) in &sr[i] {
                        row.scaled_add(v, &w.column(c));
                    }
                }
                z
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy on logits.
    Bce,
    Mse,
    /// Softmax cross-entropy on logits, one-hot targets.
    SoftmaxCe,
}

impl Loss {
    /// Per-sample losses and `dL/d(output)` (unweighted, unnormalized).
    fn eval(self, out: &Array2<f64>, target: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let n = out.nrows();
        let k = out.ncols();
        let mut losses = Array1::zeros(n);
        let mut grad = Array2::zeros(out.raw_dim());
        for i in 0..n {
            let (o, t) = (out.row(i), target.row(i));
            match self {
                Loss::Bce => {
                    for j in 0..k {
                        let (s, y) = (o[j], t[j]);
                        losses[i] += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
                        grad[[i, j]] = sigmoid(s) - y;
                    }
                }
                Loss::Mse => {
                    for j in 0..k {
                        let e = o[j] - t[j];
                        losses[i] += e * e / k as f64;
                        grad[[i, j]] = 2.0 * e / k as f64;
                    }
                }
                Loss::SoftmaxCe => {
                    let m = o.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let z: f64 = o.iter().map(|v| (v - m).exp()).sum();
                    let lz = z.ln() + m;
                    for j in 0..k {
                        losses[i] -= t[j] * (o[j] - lz);
                        grad[[i, j]] = (o[j] - lz).exp() - t[j];
                    }
                }
            }
        }
        (losses, grad)
    }

    /// Weighted mean loss over a dataset (no training).
    pub fn mean(self, out: &Array2<f64>, target: &Array2<f64>, weights: Option<&[f64]>) -> f64 {
        let (losses, _) = self.eval(out, target);
        let total: f64 = match weights {
            Some(w) => losses.iter().zip(w).map(|(l, w)| l * w).sum(),
            None => losses.sum(),
        };
        total / out.nrows() as f64
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Inputs,
    pub targets: Array2<f64>,
    /// Optional per-sample loss weights (default 1).
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn dense(inputs: Array2<f64>, targets: Array2<f64>) -> Self {
        Dataset {
            inputs: Inputs::Dense(inputs),
            targets,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Rectangular blocks of layer 0 held fixed during training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Freeze {
    pub blocks: Vec<(Range<usize>, Range<usize>)>,
    pub bias0: bool,
}

impl Freeze {
    pub fn none() -> Self {
        Freeze::default()
    }

    /// Freeze whole rows of layer 0.
    pub fn rows(rows: Range<usize>, cols: usize) -> Self {
        Freeze {
            blocks: vec![(rows, 0..cols)],
            bias0: false,
        }
    }

    pub fn is_frozen(&self, r: usize, c: usize) -> bool {
        self.blocks.iter().any(|(rr, cc)| rr.contains(&r) && cc.contains(&c))
    }

    fn mask(&self, g: &mut Array2<f64>) {
        for (rr, cc) in &self.blocks {
            let (r1, c1) = (rr.end.min(g.nrows()), cc.end.min(g.ncols()));
            if rr.start < r1 && cc.start < c1 {
                g.slice_mut(s![rr.start..r1, cc.start..c1]).fill(0.0);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `None`: full batch up to 10k samples, else 256.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.05,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch (before each step's update).
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Plain minibatch SGD. Deterministic in `cfg.seed`; frozen entries are never written.
pub fn train(net: &mut Network, data: &Dataset, loss: Loss, cfg: &TrainConfig, freeze: &Freeze) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.inputs.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: data.inputs.dim(),
        });
    }
    if data.targets.nrows() != data.len() || data.targets.ncols() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: data.len() * net.output_dim(),
            got: data.targets.len(),
        });
    }
    let n = data.len();
    let bs = cfg
        .batch_size
        .unwrap_or(if n <= 10_000 { n } else { 256 })
        .clamp(1, n);
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let l = sgd_step(net, data, batch, loss, cfg.lr, freeze);
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            epoch_loss += l * batch.len() as f64;
            steps += 1;
        }
        curve.push(epoch_loss / n as f64);
    }
    let out = predict_inputs(net, &data.inputs)?;
    let final_loss = loss.mean(&out, &data.targets, data.weights.as_deref());
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainReport {
        loss_curve: curve,
        final_loss,
        steps,
    })
}

/// Forward pass over dense or sparse inputs.
pub fn predict_inputs(net: &Network, inputs: &Inputs) -> Result<Array2<f64>> {
    match inputs {
        Inputs::Dense(x) => net.forward_batch(x),
        Inputs::Sparse { .. } => Ok(net.forward_cached(inputs, None).post.pop().expect("layers")),
    }
}

fn sgd_step(net: &mut Network, data: &Dataset, batch: &[usize], loss: Loss, lr: f64, freeze: &Freeze) -> f64 {
    let m = batch.len() as f64;
    let cache = net.forward_cached(&data.inputs, Some(batch));
    let target = data.targets.select(Axis(0), batch);
    let (losses, mut grad) = loss.eval(cache.post.last().expect("layers"), &target);
    let mut batch_loss = 0.0;
    for (k, &i) in batch.iter().enumerate() {
        let w = data.weights.as_ref().map_or(1.0, |w| w[i]);
        batch_loss += w * losses[k];
        grad.row_mut(k).mapv_inplace(|g| g * w / m);
    }
    let x0 = data.inputs.select_dense(Some(batch));
    let grads = net.backward_cached(&cache, grad, x0.as_ref());
    for i in (1..net.layers.len()).rev() {
        let l = &mut net.layers[i];
        l.w.scaled_add(-lr, &grads.dw[i]);
        l.b.scaled_add(-lr, &grads.db[i]);
    }
    let l0 = &mut net.layers[0];
    match &data.inputs {
        Inputs::Dense(_) => {
            let mut g = grads.dw[0].clone();
            freeze.mask(&mut g);
            l0.w.scaled_add(-lr, &g);
        }
        Inputs::Sparse { rows, .. } => {
            for (c, g) in sparse_w0_grad(rows, batch, &grads.dz0) {
                for (r, gv) in g.iter().enumerate() {
                    if !freeze.is_frozen(r, c) {
                        l0.w[[r, c]] -= lr * gv;
                    }
                }
            }
        }
    }
    if !freeze.bias0 {
        l0.b.scaled_add(-lr, &grads.db[0]);
    }
    batch_loss / m
}

/// Column-wise layer-0 weight gradient for sparse rows.
fn sparse_w0_grad(rows: &[Vec<(usize, f64)>], batch: &[usize], dz0: &Array2<f64>) -> BTreeMap<usize, Array1<f64>> {
    let mut cols: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    for (k, &i) in batch.iter().enumerate() {
        for &(c, v) in &rows[i] {
            cols.entry(c)
                .or_insert_with(|| Array1::zeros(dz0.ncols()))
                .scaled_add(v, &dz0.row(k));
        }
    }
    cols
}

/// Power-iteration estimate of the largest singular value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const SPECTRAL_ITERS: usize = 100;
pub const SPECTRAL_TOL: f64 = 1e-6;
/// Setting used by [`norms`]: tight enough to agree with a dense SVD to ~1e-12.
pub const PRECISE_ITERS: usize = 20_000;
pub const PRECISE_TOL: f64 = 1e-15;

/// Power iteration on `W^T W` from a fixed pseudo-random start vector.
/// All-zero matrices return 0 (converged).
pub fn spectral_norm(w: &Array2<f64>, iters: usize, tol: f64) -> SpectralEstimate {
    let zero = SpectralEstimate {
        sigma: 0.0,
        iterations: 0,
        converged: true,
    };
    if w.is_empty() || w.iter().all(|v| *v == 0.0) {
        return zero;
    }
    let mut rng = seed::rng(0x5EC7_4A11);
    let mut v: Array1<f64> = Array1::from_shape_simple_fn(w.ncols(), || rng.gen_range(0.5..1.5));
    let norm = |a: ArrayView1<f64>| a.dot(&a).sqrt();
    let nv = norm(v.view());
    v /= nv;
    let mut sigma = 0.0;
    for k in 1..=iters.max(1) {
        let u = w.dot(&v);
        let s = norm(u.view());
        if s == 0.0 {
            return SpectralEstimate { iterations: k, ..zero };
        }
        let mut next = w.t().dot(&u);
        let nn = norm(next.view());
        next /= nn;
        v = next;
        let converged = (s - sigma).abs() <= tol * s;
        sigma = s;
        if converged {
            return SpectralEstimate {
                sigma,
                iterations: k,
                converged: true,
            };
        }
    }
    SpectralEstimate {
        sigma: sigma.max(norm(w.dot(&v).view())),
        iterations: iters,
        converged: false,
    }
}

pub fn frobenius_norm(w: &Array2<f64>) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub spectral: Vec<f64>,
    pub frobenius: Vec<f64>,
    /// Product of spectral norms, excluding layer 0 when it is W0.
    pub lipschitz_upper: f64,
    /// Product of Frobenius norms over all layers.
    pub frob_product: f64,
    /// `||W0||_2` when layer 0 was designated as the embedding layer.
    pub w0_spectral: Option<f64>,
    pub converged: bool,
}

pub fn norms(net: &Network, first_layer_is_w0: bool) -> NormReport {
    let est: Vec<SpectralEstimate> = net
        .layers
        .iter()
        .map(|l| spectral_norm(&l.w, PRECISE_ITERS, PRECISE_TOL))
        .collect();
    let spectral: Vec<f64> = est.iter().map(|e| e.sigma).collect();
    let frobenius: Vec<f64> = net.layers.iter().map(|l| frobenius_norm(&l.w)).collect();
    let skip = usize::from(first_layer_is_w0);
    NormReport {
        lipschitz_upper: spectral[skip..].iter().product(),
        frob_product: frobenius.iter().product(),
        w0_spectral: first_layer_is_w0.then(|| spectral[0]),
        converged: est.iter().all(|e| e.converged),
        spectral,
        frobenius,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// `model.json` layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_relu() {
        let l = Layer {
            w: Array2::eye(2),
            b: Array1::zeros(2),
            activation: Activation::Identity,
        };
        let net = Network::from_layers(vec![l]).unwrap();
        assert_eq!(net.forward(&[0.3, -4.0]).unwrap(), vec![0.3, -4.0]);
        let mut relu = net.clone();
        relu.layers[0].activation = Activation::Relu;
        assert_eq!(relu.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn spectral_examples() {
        assert!((spectral_norm(&Array2::eye(3), 100, 1e-6).sigma - 1.0).abs() < 1e-12);
        let d = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((spectral_norm(&d, 100, 1e-6).sigma - 3.0).abs() < 1e-6);
        assert_eq!(spectral_norm(&Array2::zeros((2, 3)), 100, 1e-6).sigma, 0.0);
    }

    #[test]
    fn norm_examples() {
        let eye = |n| Layer {
            w: Array2::eye(n),
            b: Array1::zeros(n),
            activation: Activation::Identity,
        };
        let r = norms(&Network::from_layers(vec![eye(4), eye(4)]).unwrap(), false);
        assert!((r.lipschitz_upper - 1.0).abs() < 1e-12);
        assert!((r.frob_product - 4.0).abs() < 1e-12);
        let single = Layer {
            w: array![[2.0, 0.0], [0.0, 1.0]],
            b: Array1::zeros(2),
            activation: Activation::Relu,
        };
        let r = norms(&Network::from_layers(vec![single]).unwrap(), false);
        assert!((r.lipschitz_upper - 2.0).abs() < 1e-12);
        assert!((r.frob_product - 5f64.sqrt()).abs() < 1e-12);
        let r = norms(&Network::new(&[3, 4, 2], &[Activation::Identity, Activation::Relu], 1).unwrap(), true);
        assert_eq!(r.w0_spectral, Some(r.spectral[0]));
        assert_eq!(r.lipschitz_upper, r.spectral[1]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut net = Network::new(&[2, 3, 1], &[Activation::Tanh, Activation::Identity], 4).unwrap();
        let before = net.clone();
        let data = Dataset::dense(array![[1.0, 2.0], [-1.0, 0.5]], array![[1.0], [0.0]]);
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train(&mut net, &data, Loss::Bce, &cfg, &Freeze::none()).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = Network::new(&[1, 1], &[Activation::Identity], 4).unwrap();
        let data = Dataset::dense(array![[1e3], [-2e3]], array![[1e3], [5.0]]);
        let cfg = TrainConfig {
            epochs: 50,
            lr: 10.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut net, &data, Loss::Mse, &cfg, &Freeze::none()),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn sparse_matches_dense_training() {
        let dense_x = array![[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 0.0, 1.0, 0.0]];
        let sparse = Inputs::Sparse {
            dim: 4,
            rows: vec![vec![(0, 1.0), (3, 1.0)], vec![(1, 1.0), (2, 1.0)], vec![(0, 1.0), (2, 1.0)]],
        };
        let y = array![[1.0], [0.0], [1.0]];
        let net0 = Network::new(&[4, 3, 1], &[Activation::Identity, Activation::Identity], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: Some(2),
            seed: 1,
        };
        let freeze = Freeze {
            blocks: vec![(0..2, 0..2)],
            bias0: true,
        };
        let (mut a, mut b) = (net0.clone(), net0.clone());
        train(&mut a, &Dataset::dense(dense_x, y.clone()), Loss::Bce, &cfg, &freeze).unwrap();
        let ds = Dataset {
            inputs: sparse,
            targets: y,
            weights: None,
        };
        train(&mut b, &ds, Loss::Bce, &cfg, &freeze).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (x, y) in la.w.iter().zip(lb.w.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(a.layers[0].b, net0.layers[0].b);
        assert_eq!(a.layers[0].w.slice(s![0..2, 0..2]), net0.layers[0].w.slice(s![0..2, 0..2]));
    }

    #[test]
    fn record_round_trip() {
        let net = Network::new(&[3, 5, 2], &[Activation::Sigmoid, Activation::Identity], 8).unwrap();
        let text = serde_json::to_string(&net.to_record(Default::default())).unwrap();
        let back = Network::from_record(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}

//! Fully connected networks mapping a distribution to a distribution.
//!
//! Hidden layers use SELU, the output layer softmax, and training minimizes
//! soft-label cross-entropy with Adam. All arithmetic is `f64`. Dense
//! products go through `matrixmultiply`, with a batch laid out row-major as
//! `batch × features`.
//!
//! Any layer can be frozen. Frozen layers are never updated, report zero
//! gradients, and when they form a prefix of the network, training caches
//! their output once instead of recomputing it every step.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sig17;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Floor applied to predicted probabilities inside the log of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

pub const DEFAULT_HIDDEN_LAYERS: usize = 4;
pub const DEFAULT_HIDDEN_FACTOR: usize = 5;

#[inline]
pub fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
    }
}

#[inline]
fn selu_grad(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Soft-label cross-entropy `-Σ t_i ln max(p_i, 1e-12)`.
pub fn loss(predicted: &[f64], target: &[f64]) -> f64 {
    assert_eq!(predicted.len(), target.len(), "loss operands differ in length");
    -predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(LOG_FLOOR).ln() })
        .sum::<f64>()
}

/// Hidden widths `factor · d` for a `d`-outcome distribution.
pub fn architecture(d: usize, hidden_layers: usize, factor: usize) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(factor * d, hidden_layers));
    dims.push(d);
    dims
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub frozen: bool,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }
}

/// c = a·b + beta·c for row-major-or-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches; c is
    // dense row-major with m*n elements and does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Buffers for one batch: pre-activations and activations per layer.
struct Workspace {
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(net: &Mlp, batch: usize) -> Self {
        let widest = net.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(0);
        Self {
            z: net.layers.iter().map(|l| vec![0.0; batch * l.outputs]).collect(),
            a: net.layers.iter().map(|l| vec![0.0; batch * l.outputs]).collect(),
            delta: vec![0.0; batch * widest],
            delta_prev: vec![0.0; batch * widest],
        }
    }
}

impl Mlp {
    /// LeCun-normal weights (variance `1/fan_in`), zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Argument("a network needs at least two layer sizes".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Argument(format!("zero-width layer in {layer_dims:?}")));
        }
        let mut r = rng::stream(seed, "mlp-init", 0);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| normal.sample(&mut r)).collect(),
                    biases: vec![0.0; outputs],
                    frozen: false,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::Argument(format!("layer {i} parameter shapes are inconsistent")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::Argument(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.inputs,
                    layers[i - 1].outputs
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.layers[layer].frozen = frozen;
    }

    pub fn freeze_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Weights plus biases of unfrozen layers.
    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.frozen)
            .map(Layer::param_count)
            .sum()
    }

    fn first_trainable(&self) -> usize {
        self.layers
            .iter()
            .position(|l| !l.frozen)
            .unwrap_or(self.layers.len())
    }

    /// Runs layers `from..` over a `batch × layers[from].inputs` matrix.
    fn forward_from(&self, from: usize, x: &[f64], batch: usize, ws: &mut Workspace) {
        let last = self.layers.len() - 1;
        for l in from..self.layers.len() {
            let layer = &self.layers[l];
            let (before, rest) = ws.a.split_at_mut(l);
            let input: &[f64] = if l == from { x } else { &before[l - 1] };
            let z = &mut ws.z[l];
            for row in z.chunks_exact_mut(layer.outputs).take(batch) {
                row.copy_from_slice(&layer.biases);
            }
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                input,
                (layer.inputs, 1),
                &layer.weights,
                (1, layer.inputs),
                1.0,
                z,
            );
            let a = &mut rest[0];
            a[..batch * layer.outputs].copy_from_slice(&z[..batch * layer.outputs]);
            if l == last {
                for row in a.chunks_exact_mut(layer.outputs).take(batch) {
                    softmax_in_place(row);
                }
            } else {
                a[..batch * layer.outputs].iter_mut().for_each(|v| *v = selu(*v));
            }
        }
    }

    /// Output distribution for one input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    /// Outputs for `batch` inputs stacked row-major.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.input_dim(), "input length does not match batch × d_in");
        if batch == 0 {
            return Vec::new();
        }
        let mut ws = Workspace::new(self, batch);
        self.forward_from(0, x, batch, &mut ws);
        let mut out = std::mem::take(&mut ws.a[self.layers.len() - 1]);
        out.truncate(batch * self.output_dim());
        out
    }

    /// Forward pass over the frozen prefix `0..upto`.
    fn features(&self, upto: usize, x: &[f64], batch: usize) -> Vec<f64> {
        if upto == 0 {
            return x.to_vec();
        }
        let mut cur = x.to_vec();
        for layer in &self.layers[..upto] {
            let mut z = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                z.extend_from_slice(&layer.biases);
            }
            gemm(batch, layer.inputs, layer.outputs, &cur, (layer.inputs, 1), &layer.weights, (1, layer.inputs), 1.0, &mut z);
            // upto never includes the output layer
            z.iter_mut().for_each(|v| *v = selu(*v));
            cur = z;
        }
        cur
    }

    /// Forward and backward pass from layer `from` (whose input is `x`).
    /// Writes mean-over-batch gradients for unfrozen layers into `grads`
    /// (frozen entries are left untouched) and returns the summed loss.
    fn backprop(
        &self,
        from: usize,
        x: &[f64],
        targets: &[f64],
        batch: usize,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> f64 {
        self.forward_from(from, x, batch, ws);
        let last = self.layers.len() - 1;
        let d_out = self.output_dim();
        let scale = 1.0 / batch as f64;
        let mut loss_sum = 0.0;

        let out = &ws.a[last];
        let delta = &mut ws.delta[..batch * d_out];
        for r in 0..batch {
            let p = &out[r * d_out..(r + 1) * d_out];
            let t = &targets[r * d_out..(r + 1) * d_out];
            loss_sum += loss(p, t);
            let kept_mass: f64 = p
                .iter()
                .zip(t)
                .filter(|(&pi, _)| pi >= LOG_FLOOR)
                .map(|(_, &ti)| ti)
                .sum();
            for j in 0..d_out {
                let own = if p[j] >= LOG_FLOOR { t[j] } else { 0.0 };
                delta[r * d_out + j] = (p[j] * kept_mass - own) * scale;
            }
        }

        let lowest_trainable = self.first_trainable().max(from);
        let mut l = last;
        loop {
            let layer = &self.layers[l];
            let input: &[f64] = if l == from { x } else { &ws.a[l - 1] };
            let delta = &ws.delta[..batch * layer.outputs];
            if !layer.frozen {
                gemm(
                    layer.outputs,
                    batch,
                    layer.inputs,
                    delta,
                    (1, layer.outputs),
                    input,
                    (layer.inputs, 1),
                    0.0,
                    &mut grads.weights[l],
                );
                let gb = &mut grads.biases[l];
                gb.iter_mut().for_each(|v| *v = 0.0);
                for row in delta.chunks_exact(layer.outputs) {
                    gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            if l == lowest_trainable || l == from {
                break;
            }
            let prev = &mut ws.delta_prev[..batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                delta,
                (layer.outputs, 1),
                &layer.weights,
                (layer.inputs, 1),
                0.0,
                prev,
            );
            for (d, &z) in prev.iter_mut().zip(&ws.z[l - 1][..batch * layer.inputs]) {
                *d *= selu_grad(z);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            l -= 1;
        }
        loss_sum
    }

    /// Mean loss gradient over a batch of `(input, target)` pairs. Frozen
    /// layers report zeros.
    pub fn gradients(&self, batch: &[(&[f64], &[f64])]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::Argument("gradient of an empty batch".into()));
        }
        let (x, t) = self.pack(batch)?;
        let mut ws = Workspace::new(self, batch.len());
        let mut grads = Gradients::zeros_like(self);
        self.backprop(0, &x, &t, batch.len(), &mut ws, &mut grads);
        Ok(grads)
    }

    /// Mean loss over a set of pairs.
    pub fn mean_loss(&self, pairs: &[(&[f64], &[f64])]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Argument("loss of an empty set".into()));
        }
        let (x, t) = self.pack(pairs)?;
        let out = self.forward_batch(&x, pairs.len());
        let d = self.output_dim();
        Ok(out
            .chunks_exact(d)
            .zip(t.chunks_exact(d))
            .map(|(p, t)| loss(p, t))
            .sum::<f64>()
            / pairs.len() as f64)
    }

    fn pack(&self, batch: &[(&[f64], &[f64])]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (di, dout) = (self.input_dim(), self.output_dim());
        let mut x = Vec::with_capacity(batch.len() * di);
        let mut t = Vec::with_capacity(batch.len() * dout);
        for (xi, ti) in batch {
            if xi.len() != di || ti.len() != dout {
                return Err(Error::Argument(format!(
                    "pair shapes ({}, {}) do not match network ({di}, {dout})",
                    xi.len(),
                    ti.len()
                )));
            }
            x.extend_from_slice(xi);
            t.extend_from_slice(ti);
        }
        Ok((x, t))
    }

    /// One Adam update of every unfrozen layer.
    pub fn adam_step(&mut self, state: &mut AdamState, grads: &Gradients) {
        state.ensure_shape(self);
        state.t += 1;
        let c = state.config;
        let bc1 = 1.0 - c.beta1.powi(state.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(state.t.min(i32::MAX as u64) as i32);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if layer.frozen {
                continue;
            }
            adam_update(&mut layer.weights, &grads.weights[l], &mut state.m_w[l], &mut state.v_w[l], c, bc1, bc2);
            adam_update(&mut layer.biases, &grads.biases[l], &mut state.m_b[l], &mut state.v_b[l], c, bc1, bc2);
        }
    }

    /// Mini-batch Adam over shuffled pairs: `epochs × ⌈N / batch⌉` steps,
    /// keeping a short final batch. Returns the mean training loss of each
    /// epoch (measured on the pre-update forward passes).
    pub fn train(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        state: &mut AdamState,
        schedule: Schedule,
        shuffle_seed: u64,
    ) -> Result<Vec<f64>> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Argument(format!(
                "training needs matching non-empty inputs and targets ({} vs {})",
                inputs.len(),
                targets.len()
            )));
        }
        if schedule.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        let n = inputs.len();
        let pairs: Vec<(&[f64], &[f64])> = inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| (x.as_slice(), t.as_slice()))
            .collect();
        let (x_all, t_all) = self.pack(&pairs)?;
        if schedule.epochs == 0 {
            return Ok(Vec::new());
        }

        let from = self.first_trainable().min(self.layers.len() - 1);
        let feat = self.features(from, &x_all, n);
        let d_feat = self.layers[from].inputs;
        let d_out = self.output_dim();

        let bs = schedule.batch_size.min(n);
        let mut ws = Workspace::new(self, bs);
        let mut grads = Gradients::zeros_like(self);
        let mut xb = vec![0.0; bs * d_feat];
        let mut tb = vec![0.0; bs * d_out];
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::with_capacity(schedule.epochs);
        let updates = self.layers.iter().any(|l| !l.frozen);

        for epoch in 0..schedule.epochs {
            let mut r = rng::stream(shuffle_seed, "shuffle", epoch as u64);
            order.shuffle(&mut r);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(bs) {
                let b = chunk.len();
                for (k, &i) in chunk.iter().enumerate() {
                    xb[k * d_feat..(k + 1) * d_feat].copy_from_slice(&feat[i * d_feat..(i + 1) * d_feat]);
                    tb[k * d_out..(k + 1) * d_out].copy_from_slice(&t_all[i * d_out..(i + 1) * d_out]);
                }
                epoch_loss += self.backprop(from, &xb[..b * d_feat], &tb[..b * d_out], b, &mut ws, &mut grads);
                if updates {
                    self.adam_step(state, &grads);
                }
            }
            trace.push(epoch_loss / n as f64);
        }
        Ok(trace)
    }

    pub fn to_file(&self, provenance: Option<String>) -> MlpFile {
        MlpFile {
            format: MLP_FORMAT.into(),
            version: MLP_VERSION,
            layer_dims: self.layer_dims(),
            freeze: self.freeze_flags(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
            provenance,
        }
    }

    pub fn from_file(file: MlpFile) -> Result<Self> {
        if file.version != MLP_VERSION {
            return Err(Error::Argument(format!(
                "model format version {} (expected {MLP_VERSION})",
                file.version
            )));
        }
        let dims = &file.layer_dims;
        if dims.len() != file.layers.len() + 1 || file.freeze.len() != file.layers.len() {
            return Err(Error::Argument("layer_dims, freeze and layers disagree in length".into()));
        }
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, lf)| {
                if lf.weights.len() != dims[i + 1] || lf.weights.iter().any(|r| r.len() != dims[i]) {
                    return Err(Error::Argument(format!("layer {i} weight shape does not match layer_dims")));
                }
                Ok(Layer {
                    inputs: dims[i],
                    outputs: dims[i + 1],
                    weights: lf.weights.concat(),
                    biases: lf.biases,
                    frozen: file.freeze[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: Option<String>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file(provenance)).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MlpFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_file(file)
    }
}

fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], c: AdamConfig, bc1: f64, bc2: f64) {
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
        }
    }
}

/// Adam moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m_w: Vec<Vec<f64>>,
    pub v_w: Vec<Vec<f64>>,
    pub m_b: Vec<Vec<f64>>,
    pub v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m_w: Vec::new(),
            v_w: Vec::new(),
            m_b: Vec::new(),
            v_b: Vec::new(),
        }
    }

    pub fn for_net(net: &Mlp, config: AdamConfig) -> Self {
        let mut s = Self::new(config);
        s.ensure_shape(net);
        s
    }

    fn ensure_shape(&mut self, net: &Mlp) {
        let shaped = self.m_w.len() == net.layers.len()
            && self.m_w.iter().zip(&net.layers).all(|(m, l)| m.len() == l.weights.len());
        if !shaped {
            self.m_w = net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
            self.v_w = self.m_w.clone();
            self.m_b = net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();
            self.v_b = self.m_b.clone();
        }
    }
}

pub const MLP_FORMAT: &str = "qmem-mlp";
pub const MLP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    #[serde(serialize_with = "sig17::nested")]
    pub weights: Vec<Vec<f64>>,
    #[serde(serialize_with = "sig17::vec")]
    pub biases: Vec<f64>,
}

/// On-disk form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub freeze: Vec<bool>,
    pub layers: Vec<LayerFile>,
    /// Hash of the training configuration that produced the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

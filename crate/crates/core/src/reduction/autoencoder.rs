//! Fully connected autoencoder trained with Adam on Chamfer reconstruction loss.
//!
//! Encoder: `3s → hidden… → latent`, leaky ReLU (slope 0.01) on hidden
//! layers, linear output. Decoder: `latent → hidden… → 3s`, ReLU on hidden
//! layers, linear output. Gradients of the Chamfer loss hold the
//! nearest-neighbor assignment of the forward pass fixed.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flatten;
use crate::cloud::{distance, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{mix, rng};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeArchitecture {
    /// Points per sample; the input and reconstruction width is `3 · points`.
    pub points: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub decoder_hidden: Vec<usize>,
}

impl AeArchitecture {
    /// `3s → 1024 → 512 → 256 → 2` and `2 → 256 → 512 → 3s`.
    pub fn standard(points: usize) -> Self {
        Self {
            points,
            encoder_hidden: vec![1024, 512, 256],
            latent: 2,
            decoder_hidden: vec![256, 512],
        }
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut v = vec![3 * self.points];
        v.extend(&self.encoder_hidden);
        v.push(self.latent);
        v
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.latent];
        v.extend(&self.decoder_hidden);
        v.push(3 * self.points);
        v
    }
}

/// Affine layer `y = act(W x + b)`, `W` stored row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, activation: Activation, r: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in &mut layer.weights {
            *w = r.random_range(-limit..=limit);
        }
        layer
    }

    fn pre_activation(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, x)),
        );
    }
}

/// Dot product with four independent accumulators (vectorizes).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub architecture: AeArchitecture,
    pub seed: u64,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

fn stack(sizes: &[usize], hidden: Activation, r: &mut impl Rng) -> Vec<Dense> {
    let last = sizes.len() - 2;
    sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| Dense::glorot(w[0], w[1], if i == last { Activation::Linear } else { hidden }, r))
        .collect()
}

impl AutoencoderParams {
    pub fn init(architecture: AeArchitecture, seed: u64) -> Result<Self> {
        if architecture.points == 0 || architecture.latent == 0 {
            return Err(Error::InvalidParams("autoencoder needs points and a latent width".into()));
        }
        if architecture.encoder_hidden.iter().chain(&architecture.decoder_hidden).any(|&w| w == 0) {
            return Err(Error::InvalidParams("zero-width hidden layer".into()));
        }
        let mut r = rng(seed);
        let encoder = stack(&architecture.encoder_sizes(), Activation::LeakyRelu, &mut r);
        let decoder = stack(&architecture.decoder_sizes(), Activation::Relu, &mut r);
        Ok(Self {
            architecture,
            seed,
            encoder,
            decoder,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let check = |layers: &[Dense], sizes: &[usize]| {
            layers.len() + 1 == sizes.len()
                && layers.iter().zip(sizes.windows(2)).all(|(l, w)| {
                    l.inputs == w[0] && l.outputs == w[1] && l.weights.len() == w[0] * w[1] && l.bias.len() == w[1]
                })
        };
        if !check(&self.encoder, &self.architecture.encoder_sizes())
            || !check(&self.decoder, &self.architecture.decoder_sizes())
        {
            return Err(Error::Schema("layer shapes do not match the architecture".into()));
        }
        if !self.is_finite() {
            return Err(Error::Schema("non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Per-layer inputs and pre-activations of one forward pass.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn run_stack(layers: &[Dense], x: &[f64], trace: &mut Trace) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in layers {
        let mut z = Vec::with_capacity(layer.outputs);
        layer.pre_activation(&cur, &mut z);
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        trace.inputs.push(std::mem::replace(&mut cur, a));
        trace.pre.push(z);
    }
    cur
}

fn forward_traced(params: &AutoencoderParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, Trace) {
    let mut trace = Trace {
        inputs: Vec::new(),
        pre: Vec::new(),
    };
    let latent = run_stack(&params.encoder, x, &mut trace);
    let recon = run_stack(&params.decoder, &latent, &mut trace);
    (latent, recon, trace)
}

/// Latent code and flattened reconstruction of one sample.
pub fn ae_forward(params: &AutoencoderParams, sample: &PointCloud<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = flatten(sample, params.architecture.points)?;
    let (latent, recon, _) = forward_traced(params, x);
    Ok((latent, recon))
}

/// Gradients with the same layout as [`AutoencoderParams`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(params: &AutoencoderParams) -> Self {
        Self {
            layers: params
                .layers()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

fn check_recon(reconstructed: &[f64], target: &PointCloud<f64>) -> Result<()> {
    if target.dim() != 3 {
        return Err(Error::dim(3, target.dim()));
    }
    if reconstructed.len() != target.as_flat().len() {
        return Err(Error::dim(target.as_flat().len(), reconstructed.len()));
    }
    Ok(())
}

/// Chamfer distance (unsquared) between a flattened reconstruction and its target.
pub fn chamfer_loss(reconstructed: &[f64], target: &PointCloud<f64>) -> Result<f64> {
    chamfer_loss_with_grad(reconstructed, target).map(|(l, _)| l)
}

/// Chamfer loss and its subgradient with respect to the reconstruction.
///
/// Nearest neighbors come from one pass over all pairs; ties go to the lowest index.
pub fn chamfer_loss_with_grad(reconstructed: &[f64], target: &PointCloud<f64>) -> Result<(f64, Vec<f64>)> {
    check_recon(reconstructed, target)?;
    let t = target.as_flat();
    let np = reconstructed.len() / 3;
    let nq = target.len();
    let mut row_best = vec![(usize::MAX, f64::INFINITY); np];
    let mut col_best = vec![(usize::MAX, f64::INFINITY); nq];
    for (i, p) in reconstructed.chunks_exact(3).enumerate() {
        let (px, py, pz) = (p[0], p[1], p[2]);
        let row = &mut row_best[i];
        for (j, (q, col)) in t.chunks_exact(3).zip(col_best.iter_mut()).enumerate() {
            let (dx, dy, dz) = (px - q[0], py - q[1], pz - q[2]);
            let d = dx * dx + dy * dy + dz * dz;
            if d < row.1 {
                *row = (j, d);
            }
            if d < col.1 {
                *col = (i, d);
            }
        }
    }
    let mut grad = vec![0.0; reconstructed.len()];
    let mut accumulate = |i: usize, j: usize, weight: f64| {
        let p = &reconstructed[3 * i..3 * i + 3];
        let q = &t[3 * j..3 * j + 3];
        let d = distance(p, q);
        if d > 0.0 {
            for a in 0..3 {
                grad[3 * i + a] += (p[a] - q[a]) / (d * weight);
            }
        }
        d
    };
    let forward: f64 = row_best.iter().enumerate().map(|(i, &(j, _))| accumulate(i, j, np as f64)).sum();
    let backward: f64 = col_best.iter().enumerate().map(|(j, &(i, _))| accumulate(i, j, nq as f64)).sum();
    Ok((forward / np as f64 + backward / nq as f64, grad))
}

fn backprop_stack(layers: &[Dense], trace: &Trace, offset: usize, mut delta_out: Vec<f64>, grads: &mut Gradients) -> Vec<f64> {
    for (li, layer) in layers.iter().enumerate().rev() {
        let idx = offset + li;
        let z = &trace.pre[idx];
        let x = &trace.inputs[idx];
        let delta: Vec<f64> = delta_out
            .iter()
            .zip(z)
            .map(|(d, &zi)| d * layer.activation.derivative(zi))
            .collect();
        let (gw, gb) = &mut grads.layers[idx];
        let mut dx = vec![0.0; layer.inputs];
        for (o, &d) in delta.iter().enumerate() {
            gb[o] += d;
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
            for ((g, &xi), (dxi, &w)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
                *g += d * xi;
                *dxi += d * w;
            }
        }
        delta_out = dx;
    }
    delta_out
}

/// Loss of one sample; its parameter gradient is added to `grads`.
fn accumulate_gradient(params: &AutoencoderParams, sample: &PointCloud<f64>, grads: &mut Gradients) -> Result<f64> {
    let x = flatten(sample, params.architecture.points)?;
    let (_, recon, trace) = forward_traced(params, x);
    let (loss, d_recon) = chamfer_loss_with_grad(&recon, sample)?;
    let d_latent = backprop_stack(&params.decoder, &trace, params.encoder.len(), d_recon, grads);
    backprop_stack(&params.encoder, &trace, 0, d_latent, grads);
    Ok(loss)
}

/// Loss of one sample and the gradient of that loss with respect to every parameter.
pub fn sample_gradient(params: &AutoencoderParams, sample: &PointCloud<f64>) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(params);
    let loss = accumulate_gradient(params, sample, &mut grads)?;
    Ok((loss, grads))
}

/// Distance of one forward pass from the non-smooth set: the smallest
/// |pre-activation| over piecewise-linear units and the smallest gap between
/// the nearest and second-nearest Chamfer candidates.
pub fn kink_margin(params: &AutoencoderParams, sample: &PointCloud<f64>) -> Result<f64> {
    let x = flatten(sample, params.architecture.points)?;
    let (_, recon, trace) = forward_traced(params, x);
    let mut margin = f64::INFINITY;
    for (layer, z) in params.layers().zip(&trace.pre) {
        if layer.activation != Activation::Linear {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        }
    }
    let gap = |from: &[f64], to: &[f64]| {
        from.chunks_exact(3)
            .map(|p| {
                let mut d: Vec<f64> = to.chunks_exact(3).map(|q| distance(p, q)).collect();
                d.sort_by(f64::total_cmp);
                if d.len() > 1 { d[1] - d[0] } else { f64::INFINITY }
            })
            .fold(f64::INFINITY, f64::min)
    };
    margin = margin.min(gap(&recon, sample.as_flat())).min(gap(sample.as_flat(), &recon));
    Ok(margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 400,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Audio settings: 350 epochs, batch size 4.
    pub fn audio() -> Self {
        Self {
            epochs: 350,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidParams("learning rate must be > 0 and batch size ≥ 1".into()));
        }
        Ok(())
    }
}

/// Mean losses; index 0 is before training, index `e` after epoch `e`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn update(&mut self, params: &mut AutoencoderParams, g: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let layers = params.layers_mut();
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in layers
            .zip(&g.layers)
            .zip(self.m.layers.iter_mut())
            .zip(self.v.layers.iter_mut())
        {
            let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                }
            };
            apply(&mut layer.weights, gw, mw, vw);
            apply(&mut layer.bias, gb, mb, vb);
        }
    }
}

fn mean_loss(params: &AutoencoderParams, samples: &[PointCloud<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = samples
        .par_iter()
        .map(|s| ae_forward(params, s).and_then(|(_, r)| chamfer_loss(&r, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mini-batch Adam on mean Chamfer loss. Deterministic given `config.seed`.
pub fn ae_train(
    architecture: AeArchitecture,
    train: &[PointCloud<f64>],
    validation: &[PointCloud<f64>],
    config: &TrainConfig,
) -> Result<(AutoencoderParams, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyRequest("training set is empty"));
    }
    let mut params = AutoencoderParams::init(architecture, config.seed)?;
    let mut adam = Adam {
        m: Gradients::zeros_like(&params),
        v: Gradients::zeros_like(&params),
        step: 0,
    };
    let mut history = TrainHistory {
        train: vec![mean_loss(&params, train)?],
        validation: vec![mean_loss(&params, validation)?],
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut total = Gradients::zeros_like(&params);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng(mix(config.seed, epoch as u64 + 1)));
        for batch in order.chunks(config.batch_size) {
            total.clear();
            for &i in batch {
                accumulate_gradient(&params, &train[i], &mut total)?;
            }
            total.scale(1.0 / batch.len() as f64);
            adam.update(&mut params, &total, config);
        }
        history.train.push(mean_loss(&params, train)?);
        history.validation.push(mean_loss(&params, validation)?);
        log::debug!("epoch {}: train {:.6}", epoch + 1, history.train.last().unwrap());
    }
    Ok((params, history))
}

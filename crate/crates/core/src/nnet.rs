//! Small convolutional classifier trained with momentum SGD.
//!
//! Activations are flat `f64` buffers in channel-major (CHW) order. The
//! layer feeding the final fully-connected layer is the penultimate feature
//! layer; the final layer feeds a softmax.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{resize_bilinear, Image};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    /// Valid (unpadded) square convolution.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Fc {
        out: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputDims,
    pub layers: Vec<LayerSpec>,
}

/// Activation shape, channel-major. Fully-connected outputs are `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkSpec {
    /// 2 conv layers (8 and 16 channels, 3×3, stride 2) with ReLU, fc-64,
    /// ReLU, dropout 0.5, fc-`classes`, softmax.
    pub fn standard(input: InputDims, classes: usize) -> Self {
        Self {
            input,
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Fc { out: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { out: classes },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let InputDims { width, height, channels } = self.input;
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidSpec("input dims must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("network has no layers".into()));
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidSpec("last layer must be softmax".into()));
        }
        let n = self.layers.len();
        if !matches!(self.layers.get(n.wrapping_sub(2)), Some(LayerSpec::Fc { .. })) {
            return Err(Error::InvalidSpec("softmax must follow a fully-connected layer".into()));
        }
        let mut shape = Shape { c: channels, h: height, w: width };
        let mut shapes = vec![shape];
        let mut flat = false;
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride } => {
                    if flat {
                        return Err(Error::InvalidSpec(format!("layer {i}: conv after fc")));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: zero-sized conv")));
                    }
                    if kernel > shape.h || kernel > shape.w {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: kernel {kernel} larger than {}x{} input",
                            shape.w, shape.h
                        )));
                    }
                    Shape {
                        c: out_channels,
                        h: (shape.h - kernel) / stride + 1,
                        w: (shape.w - kernel) / stride + 1,
                    }
                }
                LayerSpec::Fc { out } => {
                    if out == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: fc with 0 outputs")));
                    }
                    flat = true;
                    Shape { c: out, h: 1, w: 1 }
                }
                LayerSpec::Relu => shape,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::InvalidSpec(format!("layer {i}: dropout rate {rate}")));
                    }
                    shape
                }
                LayerSpec::Softmax => {
                    if i != n - 1 {
                        return Err(Error::InvalidSpec(format!("layer {i}: softmax before the end")));
                    }
                    shape
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.get(self.layers.len().wrapping_sub(2)) {
            Some(LayerSpec::Fc { out }) => *out,
            _ => 0,
        }
    }

    fn final_fc(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn input_len(&self) -> usize {
        self.input.width * self.input.height * self.input.channels
    }
}

/// Weights and biases of one layer; empty for parameter-free layers.
/// Conv weights are `[out][in][ky][kx]`, fc weights `[out][in]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }
}

/// Trainable state: per-layer parameters plus momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
    pub velocity: Vec<LayerParams>,
}

/// Gradients with the same per-layer shapes as [`Params::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Overrides every dropout layer's rate when set.
    pub dropout: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            dropout: Some(0.5),
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid("dropout must lie in [0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Std of the final-layer init: variance 0.01.
pub const FINAL_LAYER_INIT_STD: f64 = 0.1;

fn fan_in(shape: Shape, layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Conv { kernel, .. } => shape.c * kernel * kernel,
        _ => shape.len(),
    }
}

/// `(weight_len, bias_len)` per layer.
pub fn param_sizes(spec: &NetworkSpec) -> Result<Vec<(usize, usize)>> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match *layer {
            LayerSpec::Conv { out_channels, kernel, .. } => {
                (out_channels * shapes[i].c * kernel * kernel, out_channels)
            }
            LayerSpec::Fc { out } => (out * shapes[i].len(), out),
            _ => (0, 0),
        })
        .collect())
}

/// Hidden layers get `N(0, 2/fan_in)`, the final layer `N(0, 0.1²)`,
/// biases start at zero.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Params> {
    let shapes = spec.shapes()?;
    let mut rng = seed::rng(seed);
    let final_fc = spec.final_fc();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let (inp, out) = (shapes[i], shapes[i + 1]);
        let n_weights = match *layer {
            LayerSpec::Conv { out_channels, kernel, .. } => out_channels * inp.c * kernel * kernel,
            LayerSpec::Fc { out: o } => o * inp.len(),
            _ => {
                layers.push(LayerParams::default());
                continue;
            }
        };
        let std = if i == final_fc {
            FINAL_LAYER_INIT_STD
        } else {
            (2.0 / fan_in(inp, layer) as f64).sqrt()
        };
        let normal = Normal::new(0.0, std).expect("finite std");
        layers.push(LayerParams {
            weight: (0..n_weights).map(|_| normal.sample(&mut rng)).collect(),
            bias: vec![0.0; out.c],
        });
    }
    let velocity = layers.iter().map(LayerParams::zeros_like).collect();
    Ok(Params { layers, velocity })
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn conv_forward(x: &[f64], inp: Shape, out: Shape, k: usize, s: usize, p: &LayerParams) -> Vec<f64> {
    let mut y = vec![0.0; out.len()];
    for co in 0..out.c {
        let b = p.bias[co];
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = b;
                for ci in 0..inp.c {
                    let wbase = ((co * inp.c + ci) * k) * k;
                    let xbase = ci * inp.h * inp.w;
                    for ky in 0..k {
                        let row = xbase + (oy * s + ky) * inp.w + ox * s;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            acc += p.weight[wrow + kx] * x[row + kx];
                        }
                    }
                }
                y[(co * out.h + oy) * out.w + ox] = acc;
            }
        }
    }
    y
}

fn conv_backward(
    x: &[f64],
    dy: &[f64],
    inp: Shape,
    out: Shape,
    k: usize,
    s: usize,
    p: &LayerParams,
    g: &mut LayerParams,
) -> Vec<f64> {
    let mut dx = vec![0.0; inp.len()];
    for co in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let d = dy[(co * out.h + oy) * out.w + ox];
                if d == 0.0 {
                    continue;
                }
                g.bias[co] += d;
                for ci in 0..inp.c {
                    let wbase = ((co * inp.c + ci) * k) * k;
                    let xbase = ci * inp.h * inp.w;
                    for ky in 0..k {
                        let row = xbase + (oy * s + ky) * inp.w + ox * s;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            g.weight[wrow + kx] += d * x[row + kx];
                            dx[row + kx] += d * p.weight[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn fc_forward(x: &[f64], out: usize, p: &LayerParams) -> Vec<f64> {
    let n = x.len();
    (0..out)
        .map(|o| {
            let w = &p.weight[o * n..(o + 1) * n];
            p.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn fc_backward(x: &[f64], dy: &[f64], p: &LayerParams, g: &mut LayerParams) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        g.bias[o] += d;
        let w = &p.weight[o * n..(o + 1) * n];
        let gw = &mut g.weight[o * n..(o + 1) * n];
        for i in 0..n {
            gw[i] += d * x[i];
            dx[i] += d * w[i];
        }
    }
    dx
}

/// Network bound to its validated shapes.
struct Net<'a> {
    spec: &'a NetworkSpec,
    shapes: Vec<Shape>,
    layers: &'a [LayerParams],
}

struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the posterior.
    acts: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl<'a> Net<'a> {
    fn new(spec: &'a NetworkSpec, layers: &'a [LayerParams]) -> Result<Self> {
        let shapes = spec.shapes()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "{} parameter blocks for {} layers",
                layers.len(),
                spec.layers.len()
            )));
        }
        Ok(Self { spec, shapes, layers })
    }

    /// Runs the network; dropout is active only when `dropout` is given
    /// (`Some((override_rate, rng))`).
    fn run(&self, input: Vec<f64>, mut dropout: Option<(Option<f64>, &mut Rng)>) -> Trace {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut masks = Vec::with_capacity(self.spec.layers.len());
        acts.push(input);
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let (inp, out) = (self.shapes[i], self.shapes[i + 1]);
            let mut mask = None;
            let y = match *layer {
                LayerSpec::Conv { kernel, stride, .. } => {
                    conv_forward(x, inp, out, kernel, stride, &self.layers[i])
                }
                LayerSpec::Fc { out } => fc_forward(x, out, &self.layers[i]),
                LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Dropout { rate } => match dropout.as_mut() {
                    Some((over, rng)) => {
                        let rate = over.unwrap_or(rate);
                        if rate > 0.0 {
                            let keep = 1.0 / (1.0 - rate);
                            let m: Vec<f64> = (0..x.len())
                                .map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
                                .collect();
                            let y = x.iter().zip(&m).map(|(a, b)| a * b).collect();
                            mask = Some(m);
                            y
                        } else {
                            x.clone()
                        }
                    }
                    None => x.clone(),
                },
                LayerSpec::Softmax => softmax(x),
            };
            masks.push(mask);
            acts.push(y);
        }
        Trace { acts, masks }
    }

    /// Cross-entropy loss of one traced sample and its gradient contribution
    /// accumulated into `grads`.
    fn backprop(&self, trace: &Trace, label: usize, grads: &mut [LayerParams]) -> f64 {
        let posterior = trace.acts.last().expect("posterior");
        let loss = -posterior[label].max(f64::MIN_POSITIVE).ln();
        // Softmax and cross-entropy combine to p − onehot at the logits.
        let mut delta: Vec<f64> = posterior.clone();
        delta[label] -= 1.0;
        for i in (0..self.spec.layers.len() - 1).rev() {
            let (inp, out) = (self.shapes[i], self.shapes[i + 1]);
            let x = &trace.acts[i];
            delta = match self.spec.layers[i] {
                LayerSpec::Conv { kernel, stride, .. } => {
                    conv_backward(x, &delta, inp, out, kernel, stride, &self.layers[i], &mut grads[i])
                }
                LayerSpec::Fc { .. } => fc_backward(x, &delta, &self.layers[i], &mut grads[i]),
                LayerSpec::Relu => delta
                    .iter()
                    .zip(x)
                    .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                    .collect(),
                LayerSpec::Dropout { .. } => match &trace.masks[i] {
                    Some(m) => delta.iter().zip(m).map(|(d, k)| d * k).collect(),
                    None => delta,
                },
                LayerSpec::Softmax => unreachable!("softmax is last"),
            };
        }
        loss
    }
}

/// Converts an image to the network's input buffer (CHW), requiring exact
/// dims and channel count.
pub fn image_to_input(spec: &NetworkSpec, image: &Image) -> Result<Vec<f64>> {
    let InputDims { width, height, channels } = spec.input;
    if image.dims() != (width, height) || image.channels() != channels {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height}x{channels}"),
            actual: format!("{}x{}x{}", image.width(), image.height(), image.channels()),
        });
    }
    let mut out = Vec::with_capacity(width * height * channels);
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                out.push(image.get(x, y, c));
            }
        }
    }
    Ok(out)
}

/// Resizes and converts channels so `image` matches the network input.
pub fn prepare_image(spec: &NetworkSpec, image: &Image) -> Result<Image> {
    let InputDims { width, height, channels } = spec.input;
    resize_bilinear(image, width, height)?.with_channels(channels)
}

/// One labeled network input, already in CHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn from_image(spec: &NetworkSpec, image: &Image, label: usize) -> Result<Self> {
        Ok(Self {
            input: image_to_input(spec, &prepare_image(spec, image)?)?,
            label,
        })
    }
}

const CHUNK: usize = 8;

/// Mean cross-entropy over `batch` with dropout sampled from `rng`, and its
/// gradient (weight decay excluded).
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &Params,
    batch: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let net = Net::new(spec, &params.layers)?;
    let classes = spec.num_classes();
    let input_len = spec.input_len();
    for ex in batch {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange { label: ex.label, classes });
        }
        if ex.input.len() != input_len {
            return Err(Error::DimensionMismatch {
                expected: format!("{input_len} inputs"),
                actual: format!("{} inputs", ex.input.len()),
            });
        }
    }
    // Per-sample seeds are drawn up front so the result does not depend on
    // how chunks are scheduled across threads.
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let partials: Vec<(f64, Vec<LayerParams>)> = batch
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(examples, seeds)| {
            let mut grads: Vec<LayerParams> = params.layers.iter().map(LayerParams::zeros_like).collect();
            let mut loss = 0.0;
            for (ex, &s) in examples.iter().zip(seeds) {
                let mut r = seed::rng(s);
                let trace = net.run(ex.input.clone(), Some((config.dropout, &mut r)));
                loss += net.backprop(&trace, ex.label, &mut grads);
            }
            (loss, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Vec<LayerParams> = params.layers.iter().map(LayerParams::zeros_like).collect();
    for (loss, g) in &partials {
        total += loss;
        for (a, b) in grads.iter_mut().zip(g) {
            a.add_assign(b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| g.scale(inv));
    Ok((total * inv, Gradients { layers: grads }))
}

/// Heavy-ball update: `v ← μ·v − lr·(g + decay·w)`, `w ← w + v`; biases
/// take no decay.
pub fn sgd_step(params: &mut Params, grads: &Gradients, config: &TrainConfig) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::invalid("gradient/parameter layer count mismatch"));
    }
    let (lr, mu, decay) = (config.learning_rate, config.momentum, config.weight_decay);
    for ((p, v), g) in params.layers.iter_mut().zip(&mut params.velocity).zip(&grads.layers) {
        if p.weight.len() != g.weight.len() || p.bias.len() != g.bias.len() {
            return Err(Error::invalid("gradient shape mismatch"));
        }
        for ((w, vw), gw) in p.weight.iter_mut().zip(&mut v.weight).zip(&g.weight) {
            *vw = mu * *vw - lr * (gw + decay * *w);
            *w += *vw;
        }
        for ((b, vb), gb) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
            *vb = mu * *vb - lr * gb;
            *b += *vb;
        }
    }
    Ok(())
}

/// Output of an evaluation-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Input of the final fully-connected layer.
    pub features: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// Frozen network: spec, weights and class names. Always evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams>,
    pub classes: Vec<String>,
}

impl TrainedModel {
    pub fn new(spec: NetworkSpec, layers: Vec<LayerParams>, classes: Vec<String>) -> Result<Self> {
        if classes.len() != spec.num_classes() {
            return Err(Error::InvalidSpec(format!(
                "{} class names for a {}-way output",
                classes.len(),
                spec.num_classes()
            )));
        }
        let expected = param_sizes(&spec)?;
        if layers.len() != expected.len() {
            return Err(Error::InvalidSpec("parameter block count mismatch".into()));
        }
        for (i, (l, &(wl, bl))) in layers.iter().zip(&expected).enumerate() {
            if l.weight.len() != wl || l.bias.len() != bl {
                return Err(Error::InvalidSpec(format!("layer {i} parameter shape mismatch")));
            }
        }
        Ok(Self { spec, layers, classes })
    }

    pub fn from_params(spec: NetworkSpec, params: &Params, classes: Vec<String>) -> Result<Self> {
        Self::new(spec, params.layers.clone(), classes)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn forward_input(&self, input: &[f64]) -> Result<Forward> {
        if input.len() != self.spec.input_len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} inputs", self.spec.input_len()),
                actual: format!("{} inputs", input.len()),
            });
        }
        let net = Net::new(&self.spec, &self.layers)?;
        let mut trace = net.run(input.to_vec(), None);
        let posterior = trace.acts.pop().expect("posterior");
        let features = trace.acts.swap_remove(self.spec.final_fc());
        Ok(Forward { features, posterior })
    }

    /// Forward pass on an image whose dims already match the input spec.
    pub fn forward(&self, image: &Image) -> Result<Forward> {
        self.forward_input(&image_to_input(&self.spec, image)?)
    }

    /// Resizes/converts first, then runs [`Self::forward`].
    pub fn forward_any(&self, image: &Image) -> Result<Forward> {
        self.forward(&prepare_image(&self.spec, image)?)
    }

    pub fn predict(&self, image: &Image) -> Result<usize> {
        let p = self.forward_any(image)?.posterior;
        Ok(argmax(&p))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn forward(model: &TrainedModel, image: &Image) -> Result<Forward> {
    model.forward(image)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss over the training set, no dropout, before any step.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains from `init(spec, config.seed)` with shuffled minibatches.
pub fn train(
    examples: &[Example],
    spec: &NetworkSpec,
    classes: &[String],
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainLog)> {
    config.validate()?;
    spec.shapes()?;
    if classes.len() != spec.num_classes() {
        return Err(Error::InvalidSpec(format!(
            "{} class names for a {}-way output",
            classes.len(),
            spec.num_classes()
        )));
    }
    let mut counts = vec![0usize; classes.len()];
    for ex in examples {
        if ex.label >= classes.len() {
            return Err(Error::LabelOutOfRange { label: ex.label, classes: classes.len() });
        }
        counts[ex.label] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(classes[empty].clone()));
    }
    let mut params = init(spec, config.seed)?;
    let mut rng = seed::derive_rng(config.seed, "train", 0);

    let probe = TrainedModel::from_params(spec.clone(), &params, classes.to_vec())?;
    let initial_loss = examples
        .iter()
        .map(|ex| probe.forward_input(&ex.input).map(|f| -f.posterior[ex.label].max(f64::MIN_POSITIVE).ln()))
        .sum::<Result<f64>>()?
        / examples.len() as f64;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| examples[i].clone()));
            let (loss, grads) = loss_and_grad(spec, &params, &batch, config, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            sgd_step(&mut params, &grads, config)?;
            sum += loss;
            steps += 1;
        }
        let mean = sum / steps.max(1) as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: config.epochs, step: 0 });
    }
    let model = TrainedModel::from_params(spec.clone(), &params, classes.to_vec())?;
    Ok((model, TrainLog { initial_loss, epoch_losses }))
}

const MAGIC: &[u8; 4] = b"TSNN";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    spec: NetworkSpec,
    classes: Vec<String>,
    /// `(weight_len, bias_len)` per layer, in declaration order.
    tensors: Vec<(usize, usize)>,
}

impl TrainedModel {
    /// `TSNN` magic, u32 version, u64 header length, JSON header, then every
    /// layer's weights and biases as little-endian f64 in layer order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ContainerHeader {
            spec: self.spec.clone(),
            classes: self.classes.clone(),
            tensors: self.layers.iter().map(|l| (l.weight.len(), l.bias.len())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Container(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing TSNN magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: ContainerHeader =
            serde_json::from_slice(body).map_err(|e| Error::Container(e.to_string()))?;
        let mut cursor = 16 + hlen;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let end = cursor + n * 8;
            let chunk = bytes.get(cursor..end).ok_or_else(|| bad("truncated tensor data"))?;
            cursor = end;
            Ok(chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut layers = Vec::with_capacity(header.tensors.len());
        for &(wl, bl) in &header.tensors {
            let weight = take(wl)?;
            let bias = take(bl)?;
            layers.push(LayerParams { weight, bias });
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        TrainedModel::new(header.spec, layers, header.classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input: InputDims { width: 6, height: 6, channels: 1 },
            layers: vec![
                LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::Fc { out: 5 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { out: 3 },
                LayerSpec::Softmax,
            ],
        }
    }

    fn no_dropout() -> TrainConfig {
        TrainConfig { dropout: Some(0.0), ..TrainConfig::default() }
    }

    #[test]
    fn standard_spec_chains_on_64px() {
        let spec = NetworkSpec::standard(InputDims { width: 64, height: 64, channels: 3 }, 20);
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[1], Shape { c: 8, h: 31, w: 31 });
        assert_eq!(shapes[3], Shape { c: 16, h: 15, w: 15 });
        assert_eq!(shapes.last().unwrap().c, 20);
    }

    #[test]
    fn invalid_specs() {
        let mut s = tiny_spec();
        s.layers.clear();
        assert!(matches!(init(&s, 0), Err(Error::InvalidSpec(_))));
        let mut s = tiny_spec();
        s.layers.pop();
        assert!(s.shapes().is_err());
        let mut s = tiny_spec();
        s.layers.insert(3, LayerSpec::Conv { out_channels: 1, kernel: 1, stride: 1 });
        assert!(s.shapes().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let s = tiny_spec();
        assert_eq!(init(&s, 9).unwrap(), init(&s, 9).unwrap());
        assert_ne!(init(&s, 9).unwrap(), init(&s, 10).unwrap());
        let p = init(&s, 9).unwrap();
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn final_layer_init_std() {
        let spec = NetworkSpec {
            input: InputDims { width: 1, height: 1, channels: 500 },
            layers: vec![LayerSpec::Fc { out: 40 }, LayerSpec::Softmax],
        };
        let p = init(&spec, 5).unwrap();
        let w = &p.layers[0].weight;
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - FINAL_LAYER_INIT_STD).abs() < 0.2 * FINAL_LAYER_INIT_STD, "{std}");
    }

    #[test]
    fn zero_weights_give_uniform_posterior() {
        let spec = tiny_spec();
        let mut p = init(&spec, 1).unwrap();
        for l in &mut p.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let m = TrainedModel::from_params(spec, &p, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let f = m.forward_input(&[0.3; 36]).unwrap();
        for v in f.posterior {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(f.features.len(), 5);
    }

    #[test]
    fn softmax_matches_naive_formula() {
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            let z: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            for (a, v) in softmax(&z).iter().zip(&z) {
                assert!((a - v.exp() / denom).abs() < 1e-12);
            }
        }
        // Max subtraction keeps huge logits finite.
        let p = softmax(&[1000.0, 999.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scaling_final_layer_preserves_argmax() {
        let spec = tiny_spec();
        let p = init(&spec, 4).unwrap();
        let classes: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let input: Vec<f64> = (0..36).map(|i| (i % 7) as f64 / 7.0).collect();
        let base = TrainedModel::from_params(spec.clone(), &p, classes.clone()).unwrap();
        let mut scaled = p.clone();
        let last = spec.layers.len() - 2;
        scaled.layers[last].weight.iter_mut().for_each(|w| *w *= 3.5);
        let m2 = TrainedModel::from_params(spec, &scaled, classes).unwrap();
        assert_eq!(
            argmax(&base.forward_input(&input).unwrap().posterior),
            argmax(&m2.forward_input(&input).unwrap().posterior)
        );
    }

    #[test]
    fn loss_of_uniform_posterior_is_log_n() {
        let spec = NetworkSpec {
            input: InputDims { width: 2, height: 1, channels: 1 },
            layers: vec![LayerSpec::Fc { out: 20 }, LayerSpec::Softmax],
        };
        let mut p = init(&spec, 0).unwrap();
        p.layers[0].weight.iter_mut().for_each(|w| *w = 0.0);
        let batch = vec![Example { input: vec![0.5, 0.1], label: 7 }];
        let (loss, _) = loss_and_grad(&spec, &p, &batch, &no_dropout(), &mut seed::rng(0)).unwrap();
        assert!((loss - 20f64.ln()).abs() < 1e-12);
        assert!((loss - 2.9957).abs() < 1e-4);
    }

    #[test]
    fn confident_posterior_has_zero_loss() {
        let spec = NetworkSpec {
            input: InputDims { width: 1, height: 1, channels: 1 },
            layers: vec![LayerSpec::Fc { out: 2 }, LayerSpec::Softmax],
        };
        let mut p = init(&spec, 0).unwrap();
        p.layers[0].weight = vec![0.0, 0.0];
        p.layers[0].bias = vec![800.0, 0.0];
        let batch = vec![Example { input: vec![1.0], label: 0 }];
        let (loss, _) = loss_and_grad(&spec, &p, &batch, &no_dropout(), &mut seed::rng(0)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let spec = tiny_spec();
        let p = init(&spec, 0).unwrap();
        let batch = vec![Example { input: vec![0.0; 36], label: 3 }];
        assert!(matches!(
            loss_and_grad(&spec, &p, &batch, &no_dropout(), &mut seed::rng(0)),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn vanilla_sgd_and_zero_gradient() {
        let spec = tiny_spec();
        let mut p = init(&spec, 2).unwrap();
        let orig = p.clone();
        let mut g = p.zero_gradients();
        let cfg = TrainConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.0, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg).unwrap();
        assert_eq!(p.layers, orig.layers);

        let cfg = TrainConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.0, ..TrainConfig::default() };
        g.layers[0].weight[0] = 2.0;
        g.layers[5].bias[1] = -1.0;
        sgd_step(&mut p, &g, &cfg).unwrap();
        assert_eq!(p.layers[0].weight[0], orig.layers[0].weight[0] - 0.1 * 2.0);
        assert_eq!(p.layers[5].bias[1], 0.1);
    }

    #[test]
    fn two_momentum_steps_unroll() {
        let spec = NetworkSpec {
            input: InputDims { width: 1, height: 1, channels: 1 },
            layers: vec![LayerSpec::Fc { out: 2 }, LayerSpec::Softmax],
        };
        let mut p = init(&spec, 0).unwrap();
        let start = p.layers[0].weight[0];
        let mut g = p.zero_gradients();
        g.layers[0].weight[0] = 0.5;
        let cfg = TrainConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 0.0, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg).unwrap();
        sgd_step(&mut p, &g, &cfg).unwrap();
        let disp = p.layers[0].weight[0] - start;
        assert!((disp - (-0.01 * 0.5 * (1.0 + 1.9))).abs() < 1e-15);
    }

    #[test]
    fn bias_is_exempt_from_decay() {
        let spec = NetworkSpec {
            input: InputDims { width: 1, height: 1, channels: 1 },
            layers: vec![LayerSpec::Fc { out: 2 }, LayerSpec::Softmax],
        };
        let mut p = init(&spec, 0).unwrap();
        p.layers[0].bias = vec![1.0, 1.0];
        let w0 = p.layers[0].weight[0];
        let g = p.zero_gradients();
        let cfg = TrainConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.5, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg).unwrap();
        assert_eq!(p.layers[0].bias, vec![1.0, 1.0]);
        assert!((p.layers[0].weight[0] - w0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let spec = tiny_spec();
        let p = init(&spec, 77).unwrap();
        let m = TrainedModel::from_params(spec, &p, vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let bytes = m.to_bytes();
        let back = TrainedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(TrainedModel::from_bytes(&wrong).is_err());
    }

    #[test]
    fn forward_rejects_wrong_dims() {
        let spec = tiny_spec();
        let p = init(&spec, 0).unwrap();
        let m = TrainedModel::from_params(spec, &p, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let img = Image::filled(5, 6, 1, 0.0).unwrap();
        assert!(matches!(m.forward(&img), Err(Error::DimensionMismatch { .. })));
        assert!(m.forward_any(&img).is_ok());
    }

    #[test]
    fn empty_class_is_rejected() {
        let spec = tiny_spec();
        let ex = vec![Example { input: vec![0.0; 36], label: 0 }];
        let classes: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert!(matches!(
            train(&ex, &spec, &classes, &TrainConfig::default()),
            Err(Error::EmptyClass(_))
        ));
    }
}

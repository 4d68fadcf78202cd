//! From-scratch convolutional classifier for tumor typing.
//!
//! The production architecture is six 3x3 convolutions interlaced with four
//! 2x2 max-pools and capped by two dense layers over a 128x128 input. All
//! arithmetic is f64; forward, backward, and the SGD-with-momentum loop are
//! hand-rolled and deterministic per seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{validation, Error, Result};
use crate::volume::{Slice, TumorType};

pub const CNN_FORMAT_VERSION: u32 = 1;

/// Spatial size after a convolution or pooling step:
/// `floor((input - filter + 2*padding) / stride) + 1`.
pub fn conv_output_size(input: usize, filter: usize, padding: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(validation!("stride must be >= 1"));
    }
    if filter == 0 {
        return Err(validation!("filter size must be >= 1"));
    }
    let extent = input as i64 - filter as i64 + 2 * padding as i64;
    if extent < 0 {
        return Err(validation!(
            "negative extent: input {input}, filter {filter}, padding {padding}"
        ));
    }
    let out = extent as usize / stride + 1;
    if out == 0 {
        return Err(validation!("non-positive output size"));
    }
    Ok(out)
}

/// CNN depth heuristic `P(L) = 1 / (|L - c| + 1)`; `c` is a dataset
/// constant supplied by the caller, never estimated here.
pub fn depth_performance_heuristic(layers: usize, c: usize) -> f64 {
    1.0 / ((layers as f64 - c as f64).abs() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, stride: usize, padding: usize, activation: Activation },
    MaxPool { size: usize, stride: usize },
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl CnnArchitecture {
    /// The production shape: 6 conv / 4 pool / 2 dense over 128x128.
    pub fn classifier_default() -> CnnArchitecture {
        Self::classifier_with_widths(128, &[16, 16, 32, 32, 64, 64], 128)
    }

    /// Same 6/4/2 structure with configurable filter counts, for desk-scale
    /// training budgets.
    pub fn classifier_with_widths(input: usize, conv_filters: &[usize; 6], dense_units: usize) -> CnnArchitecture {
        let conv = |filters: usize| LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
            activation: Activation::Relu,
        };
        let pool = LayerSpec::MaxPool { size: 2, stride: 2 };
        CnnArchitecture {
            input_h: input,
            input_w: input,
            input_channels: 1,
            classes: 3,
            layers: vec![
                conv(conv_filters[0]),
                conv(conv_filters[1]),
                pool,
                conv(conv_filters[2]),
                pool,
                conv(conv_filters[3]),
                pool,
                conv(conv_filters[4]),
                conv(conv_filters[5]),
                pool,
                LayerSpec::Dense { units: dense_units, activation: Activation::Relu },
                LayerSpec::Dense { units: 3, activation: Activation::Linear },
            ],
        }
    }

    /// Spatial dims and channel counts after every layer; fails when any
    /// dimension collapses or a dense layer appears before the end.
    pub fn validate_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        if self.input_h == 0 || self.input_w == 0 || self.input_channels == 0 {
            return Err(validation!("input dims must be positive"));
        }
        if self.classes < 2 {
            return Err(validation!("need at least 2 classes"));
        }
        let mut dims = Vec::new();
        let (mut c, mut h, mut w) = (self.input_channels, self.input_h, self.input_w);
        let mut dense_len: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { filters, kernel, stride, padding, .. } => {
                    if dense_len.is_some() {
                        return Err(validation!("layer {i}: conv after dense"));
                    }
                    if filters == 0 {
                        return Err(validation!("layer {i}: zero filters"));
                    }
                    h = conv_output_size(h, kernel, padding, stride)?;
                    w = conv_output_size(w, kernel, padding, stride)?;
                    c = filters;
                }
                LayerSpec::MaxPool { size, stride } => {
                    if dense_len.is_some() {
                        return Err(validation!("layer {i}: pool after dense"));
                    }
                    h = conv_output_size(h, size, 0, stride)?;
                    w = conv_output_size(w, size, 0, stride)?;
                }
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return Err(validation!("layer {i}: zero units"));
                    }
                    dense_len = Some(units);
                    c = units;
                    h = 1;
                    w = 1;
                }
            }
            dims.push((c, h, w));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units, .. }) if *units == self.classes => Ok(dims),
            _ => Err(validation!("architecture must end with a dense layer of `classes` units")),
        }
    }

    /// The production invariant: exactly 6 conv, 4 max-pool, 2 dense.
    pub fn validate_classifier_structure(&self) -> Result<()> {
        self.validate_shapes()?;
        let mut conv = 0;
        let mut pool = 0;
        let mut dense = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { .. } => conv += 1,
                LayerSpec::MaxPool { .. } => pool += 1,
                LayerSpec::Dense { .. } => dense += 1,
            }
        }
        if (conv, pool, dense) != (6, 4, 2) {
            return Err(validation!(
                "classifier must have 6 conv / 4 pool / 2 dense layers, got {conv}/{pool}/{dense}"
            ));
        }
        Ok(())
    }
}

/// One layer's parameters (empty for pooling).
#[derive(Debug, Clone)]
struct LayerParams {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// A trainable network: architecture plus per-layer parameters.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub arch: CnnArchitecture,
    params: Vec<LayerParams>,
    pub seed: u64,
}

struct LayerShape {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
}

fn layer_shapes(arch: &CnnArchitecture) -> Result<Vec<LayerShape>> {
    let dims = arch.validate_shapes()?;
    let mut shapes = Vec::new();
    let (mut c, mut h, mut w) = (arch.input_channels, arch.input_h, arch.input_w);
    for (i, _) in arch.layers.iter().enumerate() {
        let (oc, oh, ow) = dims[i];
        shapes.push(LayerShape { in_c: c, in_h: h, in_w: w, out_c: oc, out_h: oh, out_w: ow });
        (c, h, w) = (oc, oh, ow);
    }
    Ok(shapes)
}

impl CnnModel {
    /// Seeded initialization: He-style normal weights scaled by fan-in.
    pub fn new(arch: CnnArchitecture, seed: u64) -> Result<CnnModel> {
        let shapes = layer_shapes(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (layer, shape) in arch.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Conv { filters, kernel, .. } => {
                    let fan_in = (shape.in_c * kernel * kernel) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                        .map_err(|e| validation!("init failed: {e}"))?;
                    let weights =
                        (0..filters * shape.in_c * kernel * kernel).map(|_| normal.sample(&mut rng)).collect();
                    params.push(LayerParams { weights, bias: vec![0.0; filters] });
                }
                LayerSpec::MaxPool { .. } => {
                    params.push(LayerParams { weights: Vec::new(), bias: Vec::new() });
                }
                LayerSpec::Dense { units, .. } => {
                    let fan_in = (shape.in_c * shape.in_h * shape.in_w) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                        .map_err(|e| validation!("init failed: {e}"))?;
                    let weights = (0..units * shape.in_c * shape.in_h * shape.in_w)
                        .map(|_| normal.sample(&mut rng))
                        .collect();
                    params.push(LayerParams { weights, bias: vec![0.0; units] });
                }
            }
        }
        Ok(CnnModel { arch, params, seed })
    }

    /// Zero every parameter; softmax of a zero logit vector is uniform.
    pub fn zeroed(arch: CnnArchitecture) -> Result<CnnModel> {
        let mut model = CnnModel::new(arch, 0)?;
        for p in &mut model.params {
            p.weights.fill(0.0);
            p.bias.fill(0.0);
        }
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn layer_count(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.params[layer].weights
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.params[layer].weights
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.params[layer].bias
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.params[layer].bias
    }
}

fn conv_forward(
    input: &[f64],
    shape: &LayerShape,
    kernel: usize,
    stride: usize,
    padding: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let (ic, ih, iw) = (shape.in_c, shape.in_h, shape.in_w);
    let (oc, oh, ow) = (shape.out_c, shape.out_h, shape.out_w);
    for o in 0..oc {
        out[o * oh * ow..(o + 1) * oh * ow].fill(bias[o]);
    }
    for o in 0..oc {
        for i in 0..ic {
            let wbase = ((o * ic) + i) * kernel * kernel;
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weights[wbase + ky * kernel + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as i64 - padding as i64;
                        if iy < 0 || iy >= ih as i64 {
                            continue;
                        }
                        let in_row = &input[(i * ih + iy as usize) * iw..(i * ih + iy as usize + 1) * iw];
                        let out_row = &mut out[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                        if stride == 1 {
                            let shift = kx as i64 - padding as i64;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ow.min((iw as i64 - shift).max(0) as usize);
                            let src = &in_row[(ox_lo as i64 + shift) as usize
                                ..(ox_lo as i64 + shift) as usize + (ox_hi - ox_lo)];
                            for (dst, s) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *dst += wv * s;
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as i64 - padding as i64;
                                if ix >= 0 && ix < iw as i64 {
                                    out_row[ox] += wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-layer forward caches used by the backward pass.
enum Cache {
    Conv { input: Vec<f64>, pre: Vec<f64> },
    Pool { input_len: usize, argmax: Vec<u32> },
    Dense { input: Vec<f64>, pre: Vec<f64> },
}

fn forward_with_caches(model: &CnnModel, shapes: &[LayerShape], image: &[f64], caches: Option<&mut Vec<Cache>>) -> Vec<f64> {
    let mut caches = caches;
    let mut x = image.to_vec();
    for (li, layer) in model.arch.layers.iter().enumerate() {
        let shape = &shapes[li];
        match *layer {
            LayerSpec::Conv { kernel, stride, padding, activation, .. } => {
                let mut out = vec![0.0; shape.out_c * shape.out_h * shape.out_w];
                conv_forward(&x, shape, kernel, stride, padding, &model.params[li].weights, &model.params[li].bias, &mut out);
                let pre = out.clone();
                if activation == Activation::Relu {
                    for v in out.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::Conv { input: std::mem::replace(&mut x, out), pre });
                } else {
                    x = out;
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                let (c, ih, iw) = (shape.in_c, shape.in_h, shape.in_w);
                let (oh, ow) = (shape.out_h, shape.out_w);
                let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
                let mut argmax = vec![0u32; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0u32;
                            for dy in 0..size {
                                let iy = oy * stride + dy;
                                if iy >= ih {
                                    continue;
                                }
                                for dx in 0..size {
                                    let ix = ox * stride + dx;
                                    if ix >= iw {
                                        continue;
                                    }
                                    let idx = (ch * ih + iy) * iw + ix;
                                    if x[idx] > best {
                                        best = x[idx];
                                        best_idx = idx as u32;
                                    }
                                }
                            }
                            out[(ch * oh + oy) * ow + ox] = best;
                            argmax[(ch * oh + oy) * ow + ox] = best_idx;
                        }
                    }
                }
                if let Some(cs) = caches.as_deref_mut() {
                    cs.push(Cache::Pool { input_len: x.len(), argmax });
                }
                x = out;
            }
            LayerSpec::Dense { units, activation } => {
                let in_len = shape.in_c * shape.in_h * shape.in_w;
                let params = &model.params[li];
                let mut out = vec![0.0; units];
                for (u, o) in out.iter_mut().enumerate() {
                    let row = &params.weights[u * in_len..(u + 1) * in_len];
                    let mut acc = params.bias[u];
                    for (w, v) in row.iter().zip(&x) {
                        acc += w * v;
                    }
                    *o = acc;
                }
                let pre = out.clone();
                if activation == Activation::Relu {
                    for v in out.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::Dense { input: std::mem::replace(&mut x, out), pre });
                } else {
                    x = out;
                }
            }
        }
    }
    x
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class probabilities for one image (values in [0,1] summing to 1).
pub fn forward(model: &CnnModel, image: &[f64]) -> Result<Vec<f64>> {
    let shapes = layer_shapes(&model.arch)?;
    if image.len() != model.arch.input_channels * model.arch.input_h * model.arch.input_w {
        return Err(validation!("image length does not match the architecture input"));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(validation!("image must be finite"));
    }
    let logits = forward_with_caches(model, &shapes, image, None);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(validation!("non-finite activations in forward pass"));
    }
    Ok(softmax(&logits))
}

/// Per-parameter gradients, same layout as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.bias[layer]
    }

    fn zeros_like(model: &CnnModel) -> Gradients {
        Gradients {
            weights: model.params.iter().map(|p| vec![0.0; p.weights.len()]).collect(),
            bias: model.params.iter().map(|p| vec![0.0; p.bias.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }
}

fn backward_single(
    model: &CnnModel,
    shapes: &[LayerShape],
    image: &[f64],
    label: usize,
) -> (f64, Gradients) {
    let mut caches = Vec::new();
    let logits = forward_with_caches(model, shapes, image, Some(&mut caches));
    let probs = softmax(&logits);
    let loss = -(probs[label].max(1e-300)).ln();

    let mut grads = Gradients::zeros_like(model);
    // softmax cross-entropy: dL/dz = p - onehot
    let mut delta: Vec<f64> = probs;
    delta[label] -= 1.0;

    for li in (0..model.arch.layers.len()).rev() {
        let shape = &shapes[li];
        match (model.arch.layers[li], &caches[li]) {
            (LayerSpec::Dense { units, activation }, Cache::Dense { input, pre }) => {
                if activation == Activation::Relu {
                    for (d, z) in delta.iter_mut().zip(pre) {
                        if *z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let in_len = input.len();
                let params = &model.params[li];
                let gw = &mut grads.weights[li];
                for u in 0..units {
                    grads.bias[li][u] += delta[u];
                    let row = &mut gw[u * in_len..(u + 1) * in_len];
                    let d = delta[u];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                let mut dx = vec![0.0f64; in_len];
                for u in 0..units {
                    let row = &params.weights[u * in_len..(u + 1) * in_len];
                    let d = delta[u];
                    for (x, w) in dx.iter_mut().zip(row) {
                        *x += d * w;
                    }
                }
                delta = dx;
            }
            (LayerSpec::MaxPool { .. }, Cache::Pool { input_len, argmax }) => {
                let mut dx = vec![0.0f64; *input_len];
                for (d, idx) in delta.iter().zip(argmax) {
                    dx[*idx as usize] += d;
                }
                delta = dx;
            }
            (LayerSpec::Conv { kernel, stride, padding, activation, .. }, Cache::Conv { input, pre }) => {
                if activation == Activation::Relu {
                    for (d, z) in delta.iter_mut().zip(pre) {
                        if *z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let (ic, ih, iw) = (shape.in_c, shape.in_h, shape.in_w);
                let (oc, oh, ow) = (shape.out_c, shape.out_h, shape.out_w);
                let params = &model.params[li];
                let gw = &mut grads.weights[li];
                let mut dx = vec![0.0f64; input.len()];
                for o in 0..oc {
                    let dplane = &delta[o * oh * ow..(o + 1) * oh * ow];
                    grads.bias[li][o] += dplane.iter().sum::<f64>();
                    for i in 0..ic {
                        let wbase = ((o * ic) + i) * kernel * kernel;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = params.weights[wbase + ky * kernel + kx];
                                let mut gacc = 0.0;
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as i64 - padding as i64;
                                    if iy < 0 || iy >= ih as i64 {
                                        continue;
                                    }
                                    let in_row = &input
                                        [(i * ih + iy as usize) * iw..(i * ih + iy as usize + 1) * iw];
                                    let dx_row = &mut dx
                                        [(i * ih + iy as usize) * iw..(i * ih + iy as usize + 1) * iw];
                                    let d_row = &dplane[oy * ow..(oy + 1) * ow];
                                    if stride == 1 {
                                        let shift = kx as i64 - padding as i64;
                                        let ox_lo = (-shift).max(0) as usize;
                                        let ox_hi = ow.min((iw as i64 - shift).max(0) as usize);
                                        let base = (ox_lo as i64 + shift) as usize;
                                        for (k, d) in d_row[ox_lo..ox_hi].iter().enumerate() {
                                            gacc += d * in_row[base + k];
                                            dx_row[base + k] += d * wv;
                                        }
                                    } else {
                                        for ox in 0..ow {
                                            let ix = (ox * stride + kx) as i64 - padding as i64;
                                            if ix >= 0 && ix < iw as i64 {
                                                gacc += d_row[ox] * in_row[ix as usize];
                                                dx_row[ix as usize] += d_row[ox] * wv;
                                            }
                                        }
                                    }
                                }
                                gw[wbase + ky * kernel + kx] += gacc;
                            }
                        }
                    }
                }
                delta = dx;
            }
            _ => unreachable!("cache kind matches layer kind"),
        }
    }
    (loss, grads)
}

/// Mean softmax cross-entropy and mean gradients over a batch.
pub fn loss_and_gradients(model: &CnnModel, batch: &[(Vec<f64>, usize)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(validation!("empty batch"));
    }
    let shapes = layer_shapes(&model.arch)?;
    let input_len = model.arch.input_channels * model.arch.input_h * model.arch.input_w;
    for (img, label) in batch {
        if img.len() != input_len {
            return Err(validation!("image length does not match the architecture input"));
        }
        if *label >= model.arch.classes {
            return Err(validation!("label {label} out of range"));
        }
    }
    // parallel per sample, reduced in fixed order for determinism
    let results: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|(img, label)| backward_single(model, &shapes, img, *label))
        .collect();
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        total.add(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 40, learning_rate: 1e-3, momentum: 0.9, batch_size: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// SGD with momentum over seeded shuffled batches. Returns per-epoch train
/// (and optional validation) loss history.
pub fn train(
    model: &mut CnnModel,
    train_set: &[(Vec<f64>, usize)],
    val_set: Option<&[(Vec<f64>, usize)]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    use rand::seq::SliceRandom;

    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(validation!("epochs and batch size must be positive"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(validation!("learning rate must be positive"));
    }
    if train_set.is_empty() {
        return Err(validation!("empty training set"));
    }
    let mut present = vec![false; model.arch.classes];
    for (_, l) in train_set {
        present[*l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(validation!("training set must contain at least 2 classes"));
    }

    let mut velocity = Gradients::zeros_like(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, usize)> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(model, &batch)?;
            epoch_loss += loss;
            batches += 1;
            for li in 0..model.params.len() {
                for (v, g) in velocity.weights[li].iter_mut().zip(&grads.weights[li]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                }
                for (w, v) in model.params[li].weights.iter_mut().zip(&velocity.weights[li]) {
                    *w += v;
                }
                for (v, g) in velocity.bias[li].iter_mut().zip(&grads.bias[li]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                }
                for (b, v) in model.params[li].bias.iter_mut().zip(&velocity.bias[li]) {
                    *b += v;
                }
            }
        }
        let val_loss = match val_set {
            Some(set) if !set.is_empty() => {
                let mut sum = 0.0;
                for (img, label) in set {
                    let p = forward(model, img)?;
                    sum += -(p[*label].max(1e-300)).ln();
                }
                Some(sum / set.len() as f64)
            }
            _ => None,
        };
        history.push(EpochStats { train_loss: epoch_loss / batches as f64, val_loss });
    }
    Ok(history)
}

/// Resample a ROI crop to the architecture input by bilinear interpolation
/// and flatten it to a single-channel image buffer.
pub fn roi_to_input(roi: &Slice, arch: &CnnArchitecture) -> Result<Vec<f64>> {
    if roi.width() == 0 || roi.height() == 0 || roi.data().is_empty() {
        return Err(validation!("empty ROI"));
    }
    let (th, tw) = (arch.input_h, arch.input_w);
    let mut out = Vec::with_capacity(th * tw);
    for row in 0..th {
        for col in 0..tw {
            let sr = if th > 1 { row as f64 / (th - 1) as f64 * (roi.height() - 1) as f64 } else { 0.0 };
            let sc = if tw > 1 { col as f64 / (tw - 1) as f64 * (roi.width() - 1) as f64 } else { 0.0 };
            out.push(roi.sample_bilinear(sc, sr) as f64);
        }
    }
    Ok(out)
}

/// Classify a tumor ROI: argmax class, ties to the lower id.
pub fn classify_tumor(model: &CnnModel, roi: &Slice) -> Result<(TumorType, Vec<f64>)> {
    let input = roi_to_input(roi, &model.arch)?;
    let probs = forward(model, &input)?;
    let mut best = 0usize;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    let tumor_type = TumorType::from_class_index(best)
        .ok_or_else(|| validation!("class index {best} has no tumor type"))?;
    Ok((tumor_type, probs))
}

#[derive(Serialize, Deserialize)]
struct CnnHeader {
    version: u32,
    arch: CnnArchitecture,
    seed: u64,
}

/// Save as a JSON architecture header line followed by little-endian f32
/// tensors in declaration order (weights then bias per layer).
pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let header = CnnHeader { version: CNN_FORMAT_VERSION, arch: model.arch.clone(), seed: model.seed };
    let json = serde_json::to_string(&header).map_err(|e| validation!("header encode failed: {e}"))?;
    writeln!(w, "{json}")?;
    for p in &model.params {
        for v in p.weights.iter().chain(p.bias.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::io::BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing header line", path.display())))?;
    let header: CnnHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.version != CNN_FORMAT_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {}", path.display(), header.version)));
    }
    let mut model = CnnModel::new(header.arch, header.seed)?;
    let mut offset = newline + 1;
    for p in &mut model.params {
        for slot in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            if offset + 4 > bytes.len() {
                return Err(Error::Format(format!("{}: tensor payload truncated", path.display())));
            }
            *slot = f32::from_le_bytes([
                bytes[offset],
                bytes[offset + 1],
                bytes[offset + 2],
                bytes[offset + 3],
            ]) as f64;
            offset += 4;
        }
    }
    if offset != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes after tensors", path.display())));
    }
    Ok(model)
}

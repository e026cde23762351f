//! Feed-forward networks over a flat parameter vector.
//!
//! # Parameter layout
//!
//! A [`ParamVector`] concatenates the layers in forward order. Within a layer
//! the weights come first, then the biases. Weights are row-major with one row
//! per output unit:
//!
//! | layer            | weight shape                        | bias shape       |
//! |------------------|-------------------------------------|------------------|
//! | conv stem        | `out_ch x in_ch x kernel x kernel`  | `out_ch`         |
//! | dense `i -> o`   | `o x i`                             | `o`              |
//!
//! A dense layer computes `W x + b`. Every layer but the last is followed by
//! the model's activation.

mod tape;

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use tape::{ConvGeometry, Gradients, Tape, Var};

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu or tanh)")),
        }
    }
}

/// Single unpadded convolution applied before the dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStem {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Input image geometry `(channels, height, width)`.
    pub input: (usize, usize, usize),
}

impl ConvStem {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.input.0,
            height: self.input.1,
            width: self.input.2,
            out_channels: self.channels,
            kernel: self.kernel,
            stride: self.stride,
        }
    }
}

/// Network description. `layer_dims[0]` is the raw input width and the last
/// entry is the class count; with a conv stem the first dense layer consumes
/// the stem's output instead of the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub conv_stem: Option<ConvStem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    Dense { inputs: usize, outputs: usize },
}

/// Where one layer lives inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub kind: LayerKind,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
}

impl LayerSlot {
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.patch_len(),
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv(g) => vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }
}

impl ModelSpec {
    pub fn mlp(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        let spec = ModelSpec { layer_dims: layer_dims.to_vec(), activation, conv_stem: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Shape("a model needs at least input and output widths".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {:?}", self.layer_dims)));
        }
        if let Some(stem) = &self.conv_stem {
            let (c, h, w) = stem.input;
            if c * h * w != self.layer_dims[0] {
                return Err(Error::Shape(format!(
                    "conv input {c}x{h}x{w} does not match input width {}",
                    self.layer_dims[0]
                )));
            }
            if stem.channels == 0 || stem.stride == 0 || stem.kernel == 0 || stem.kernel > h || stem.kernel > w {
                return Err(Error::Shape(format!("invalid conv stem {stem:?}")));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Layer slots in forward order.
    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |kind: LayerKind, weight_len: usize, bias_len: usize| {
            slots.push(LayerSlot {
                kind,
                weight_offset: offset,
                weight_len,
                bias_offset: offset + weight_len,
                bias_len,
            });
            offset += weight_len + bias_len;
        };
        let mut width = self.layer_dims[0];
        if let Some(stem) = &self.conv_stem {
            let g = stem.geometry();
            push(LayerKind::Conv(g), g.out_channels * g.patch_len(), g.out_channels);
            width = g.out_len();
        }
        for &outputs in &self.layer_dims[1..] {
            push(LayerKind::Dense { inputs: width, outputs }, outputs * width, outputs);
            width = outputs;
        }
        slots
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map(|s| s.bias_offset + s.bias_len).unwrap_or(0)
    }

    fn check_params(&self, w: &[f64]) -> Result<()> {
        let n = self.param_count();
        if w.len() != n {
            return Err(Error::Shape(format!("parameter vector has {} entries, model needs {n}", w.len())));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.row_len() != self.input_width() {
            return Err(Error::Shape(format!(
                "batch rows have {} features, model expects {}",
                batch.row_len(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`, returning the parameter leaves and logits.
    pub fn build(&self, tape: &mut Tape, w: &[f64], batch: &Tensor, param_grads: bool) -> Result<(Vec<(Var, Var)>, Var)> {
        self.check_params(w)?;
        self.check_batch(batch)?;
        let rows = batch.rows();
        let mut x = tape.leaf(batch.data().to_vec(), rows, batch.row_len(), false);
        let slots = self.layout();
        let mut leaves = Vec::with_capacity(slots.len());
        for (i, slot) in slots.iter().enumerate() {
            let bias = w[slot.bias_offset..slot.bias_offset + slot.bias_len].to_vec();
            let weight = w[slot.weight_offset..slot.weight_offset + slot.weight_len].to_vec();
            let b = tape.leaf(bias, 1, slot.bias_len, param_grads);
            x = match slot.kind {
                LayerKind::Conv(g) => {
                    let wv = tape.leaf(weight, g.out_channels, g.patch_len(), param_grads);
                    leaves.push((wv, b));
                    tape.conv2d(x, wv, b, g)?
                }
                LayerKind::Dense { inputs, outputs } => {
                    let wv = tape.leaf(weight, outputs, inputs, param_grads);
                    leaves.push((wv, b));
                    tape.linear(x, wv, b)?
                }
            };
            if i + 1 < slots.len() {
                x = match self.activation {
                    Activation::Relu => tape.relu(x),
                    Activation::Tanh => tape.tanh(x),
                };
            }
        }
        Ok((leaves, x))
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                $name(values)
            }

            pub fn zeros(n: usize) -> Self {
                $name(vec![0.0; n])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }
    };
}

flat_vector!(ParamVector);
flat_vector!(GradVector);

/// Weights and biases of one layer, shaped per the layout table.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn flatten(spec: &ModelSpec, layers: &[LayerParams]) -> Result<ParamVector> {
    let slots = spec.layout();
    if layers.len() != slots.len() {
        return Err(Error::Shape(format!("{} layers given, model has {}", layers.len(), slots.len())));
    }
    let mut out = Vec::with_capacity(spec.param_count());
    for (slot, layer) in slots.iter().zip(layers) {
        if layer.weight.shape() != slot.weight_shape().as_slice() || layer.bias.len() != slot.bias_len {
            return Err(Error::Shape(format!(
                "layer weight {:?} / bias {} does not match slot {:?}",
                layer.weight.shape(),
                layer.bias.len(),
                slot.kind
            )));
        }
        out.extend_from_slice(layer.weight.data());
        out.extend_from_slice(layer.bias.data());
    }
    Ok(ParamVector(out))
}

pub fn unflatten(spec: &ModelSpec, w: &ParamVector) -> Result<Vec<LayerParams>> {
    spec.check_params(w)?;
    spec.layout()
        .iter()
        .map(|slot| {
            Ok(LayerParams {
                weight: Tensor::new(
                    slot.weight_shape(),
                    w[slot.weight_offset..slot.weight_offset + slot.weight_len].to_vec(),
                )?,
                bias: Tensor::new(vec![slot.bias_len], w[slot.bias_offset..slot.bias_offset + slot.bias_len].to_vec())?,
            })
        })
        .collect()
}

/// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; spec.param_count()];
    for slot in spec.layout() {
        let bound = (6.0 / slot.fan_in() as f64).sqrt();
        for x in &mut w[slot.weight_offset..slot.weight_offset + slot.weight_len] {
            *x = rng.gen_range(-bound..bound);
        }
    }
    ParamVector(w)
}

pub fn forward(spec: &ModelSpec, w: &[f64], batch: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (_, logits) = spec.build(&mut tape, w, batch, false)?;
    Tensor::new(vec![batch.rows(), spec.num_classes()], tape.value(logits).to_vec())
}

/// Mean of `-log softmax(logits)[label]` over the batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!("logits must be 2-D, got {:?}", logits.shape())));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(logits.data().to_vec(), logits.rows(), logits.row_len(), false);
    let loss = tape.softmax_cross_entropy(z, labels)?;
    Ok(tape.value(loss)[0])
}

/// Mean batch loss only.
pub fn loss(spec: &ModelSpec, w: &[f64], batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let (_, logits) = spec.build(&mut tape, w, batch, false)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    Ok(tape.value(loss)[0])
}

/// Mean batch loss and its exact gradient in parameter layout.
pub fn backward(spec: &ModelSpec, w: &[f64], batch: &Tensor, labels: &[usize]) -> Result<(f64, GradVector)> {
    let mut tape = Tape::new();
    let (leaves, logits) = spec.build(&mut tape, w, batch, true)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let grads = tape.backward(loss);
    let mut g = vec![0.0; w.len()];
    for (slot, (wv, bv)) in spec.layout().iter().zip(leaves) {
        if let Some(gw) = grads.get(wv) {
            g[slot.weight_offset..slot.weight_offset + slot.weight_len].copy_from_slice(gw);
        }
        if let Some(gb) = grads.get(bv) {
            g[slot.bias_offset..slot.bias_offset + slot.bias_len].copy_from_slice(gb);
        }
    }
    Ok((tape.value(loss)[0], GradVector(g)))
}

/// Mean loss and accuracy over a whole dataset, evaluated in chunks.
pub fn evaluate(spec: &ModelSpec, w: &[f64], inputs: &Tensor, labels: &[usize], chunk: usize) -> Result<(f64, f64)> {
    let n = inputs.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} inputs", labels.len())));
    }
    let chunk = chunk.max(1);
    let classes = spec.num_classes();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = inputs.select_rows(&idx)?;
        let logits = forward(spec, w, &batch)?;
        loss_sum += cross_entropy(&logits, &labels[start..end])? * (end - start) as f64;
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels[start..end]) {
            let mut best = 0;
            for j in 1..classes {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

#[cfg(test)]
mod tests;

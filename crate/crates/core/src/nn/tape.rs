//! Reverse-mode automatic differentiation over a linear tape of 2-D values.
//!
//! Every value is a row-major `rows x cols` matrix whose leading dimension is
//! the batch. Nodes are appended in evaluation order, so walking the tape
//! backwards visits each node after all of its consumers.

use crate::linalg::{gemm, MatRef};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a strided, unpadded 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }
}

enum Op {
    Leaf,
    Linear { input: Var, weight: Var, bias: Var },
    Conv { input: Var, weight: Var, bias: Var, geom: ConvGeometry, cols: Vec<f64> },
    Relu(Var),
    Tanh(Var),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize, needs_grad: bool) -> Var {
        self.push(value, rows, cols, needs_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// `x W^T + b` with `W` stored `out x in`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, fan_in) = self.dims(input);
        let (out, w_in) = self.dims(weight);
        if w_in != fan_in || self.dims(bias) != (1, out) {
            return Err(Error::Shape(format!(
                "linear: input width {fan_in} vs weight {out}x{w_in}, bias {:?}",
                self.dims(bias)
            )));
        }
        let mut value = vec![0.0; batch * out];
        {
            let b = self.value(bias);
            for row in value.chunks_exact_mut(out) {
                row.copy_from_slice(b);
            }
        }
        gemm(
            1.0,
            MatRef::new(self.value(input), batch, fan_in),
            MatRef::new(self.value(weight), out, fan_in).t(),
            1.0,
            &mut value,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, batch, out, needs, Op::Linear { input, weight, bias }))
    }

    /// Convolution of a `batch x (C*H*W)` input; output is channel-major per sample.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let (batch, width) = self.dims(input);
        if width != geom.in_channels * geom.height * geom.width
            || self.dims(weight) != (geom.out_channels, geom.patch_len())
            || self.dims(bias) != (1, geom.out_channels)
        {
            return Err(Error::Shape(format!("conv2d: operands do not match {geom:?}")));
        }
        let (oh, ow, patch) = (geom.out_height(), geom.out_width(), geom.patch_len());
        let positions = oh * ow;
        let x = self.value(input);
        let mut cols = vec![0.0; batch * positions * patch];
        for b in 0..batch {
            let img = &x[b * width..(b + 1) * width];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = &mut cols[((b * positions) + oy * ow + ox) * patch..][..patch];
                    let mut idx = 0;
                    for c in 0..geom.in_channels {
                        for ky in 0..geom.kernel {
                            let y = oy * geom.stride + ky;
                            let base = (c * geom.height + y) * geom.width + ox * geom.stride;
                            row[idx..idx + geom.kernel].copy_from_slice(&img[base..base + geom.kernel]);
                            idx += geom.kernel;
                        }
                    }
                }
            }
        }
        let mut mat = vec![0.0; batch * positions * geom.out_channels];
        gemm(
            1.0,
            MatRef::new(&cols, batch * positions, patch),
            MatRef::new(self.value(weight), geom.out_channels, patch).t(),
            0.0,
            &mut mat,
        );
        let bias_v = self.value(bias);
        let mut value = vec![0.0; batch * geom.out_len()];
        for b in 0..batch {
            for p in 0..positions {
                for o in 0..geom.out_channels {
                    value[b * geom.out_len() + o * positions + p] =
                        mat[(b * positions + p) * geom.out_channels + o] + bias_v[o];
                }
            }
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let out_len = geom.out_len();
        Ok(self.push(value, batch, out_len, needs, Op::Conv { input, weight, bias, geom, cols }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let needs = self.needs(x);
        self.push(value, r, c, needs, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        let needs = self.needs(x);
        self.push(value, r, c, needs, Op::Tanh(x))
    }

    /// Mean softmax cross-entropy over the batch; a `1 x 1` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.dims(logits);
        if labels.len() != batch {
            return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let z = self.value(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Label { label, classes });
            }
            let row = &z[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * classes..(i + 1) * classes];
            let mut sum = 0.0;
            for (pj, &zj) in p.iter_mut().zip(row) {
                *pj = (zj - max).exp();
                sum += *pj;
            }
            for pj in p.iter_mut() {
                *pj /= sum;
            }
            total += (max - row[label]) + sum.ln();
        }
        let needs = self.needs(logits);
        let loss = total / batch as f64;
        Ok(self.push(vec![loss], 1, 1, needs, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs }))
    }

    /// Back-propagates from a scalar node, seeding its gradient with 1.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);

        for id in (0..=loss.0).rev() {
            let Some(upstream) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { input, weight, bias } => {
                    let (batch, out) = (node.rows, node.cols);
                    let fan_in = self.nodes[input.0].cols;
                    if self.needs(*input) {
                        let g = slot(&mut grads, *input, batch * fan_in);
                        gemm(
                            1.0,
                            MatRef::new(&upstream, batch, out),
                            MatRef::new(self.value(*weight), out, fan_in),
                            1.0,
                            g,
                        );
                    }
                    if self.needs(*weight) {
                        let g = slot(&mut grads, *weight, out * fan_in);
                        gemm(
                            1.0,
                            MatRef::new(&upstream, batch, out).t(),
                            MatRef::new(self.value(*input), batch, fan_in),
                            1.0,
                            g,
                        );
                    }
                    if self.needs(*bias) {
                        let g = slot(&mut grads, *bias, out);
                        for row in upstream.chunks_exact(out) {
                            for (gj, r) in g.iter_mut().zip(row) {
                                *gj += r;
                            }
                        }
                    }
                }
                Op::Conv { input, weight, bias, geom, cols } => {
                    let batch = node.rows;
                    let positions = geom.out_height() * geom.out_width();
                    let patch = geom.patch_len();
                    let oc = geom.out_channels;
                    let mut dmat = vec![0.0; batch * positions * oc];
                    for b in 0..batch {
                        for o in 0..oc {
                            for p in 0..positions {
                                dmat[(b * positions + p) * oc + o] = upstream[b * geom.out_len() + o * positions + p];
                            }
                        }
                    }
                    if self.needs(*weight) {
                        let g = slot(&mut grads, *weight, oc * patch);
                        gemm(
                            1.0,
                            MatRef::new(&dmat, batch * positions, oc).t(),
                            MatRef::new(cols, batch * positions, patch),
                            1.0,
                            g,
                        );
                    }
                    if self.needs(*bias) {
                        let g = slot(&mut grads, *bias, oc);
                        for row in dmat.chunks_exact(oc) {
                            for (gj, r) in g.iter_mut().zip(row) {
                                *gj += r;
                            }
                        }
                    }
                    if self.needs(*input) {
                        let mut dcols = vec![0.0; batch * positions * patch];
                        gemm(
                            1.0,
                            MatRef::new(&dmat, batch * positions, oc),
                            MatRef::new(self.value(*weight), oc, patch),
                            0.0,
                            &mut dcols,
                        );
                        let width = geom.in_channels * geom.height * geom.width;
                        let g = slot(&mut grads, *input, batch * width);
                        let ow = geom.out_width();
                        for b in 0..batch {
                            for p in 0..positions {
                                let (oy, ox) = (p / ow, p % ow);
                                let row = &dcols[(b * positions + p) * patch..][..patch];
                                let mut idx = 0;
                                for c in 0..geom.in_channels {
                                    for ky in 0..geom.kernel {
                                        let y = oy * geom.stride + ky;
                                        let base = b * width + (c * geom.height + y) * geom.width + ox * geom.stride;
                                        for kx in 0..geom.kernel {
                                            g[base + kx] += row[idx];
                                            idx += 1;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let len = upstream.len();
                        let xv = self.value(*x);
                        let g = slot(&mut grads, *x, len);
                        for ((gi, u), xi) in g.iter_mut().zip(&upstream).zip(xv) {
                            if *xi > 0.0 {
                                *gi += u;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    if self.needs(*x) {
                        let len = upstream.len();
                        let yv = &node.value;
                        let g = slot(&mut grads, *x, len);
                        for ((gi, u), y) in g.iter_mut().zip(&upstream).zip(yv) {
                            *gi += u * (1.0 - y * y);
                        }
                    }
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    if self.needs(*logits) {
                        let (batch, classes) = self.dims(*logits);
                        let scale = upstream[0] / batch as f64;
                        let g = slot(&mut grads, *logits, batch * classes);
                        for (i, &label) in labels.iter().enumerate() {
                            for j in 0..classes {
                                let onehot = if j == label { 1.0 } else { 0.0 };
                                g[i * classes + j] += scale * (probs[i * classes + j] - onehot);
                            }
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(upstream);
            }
        }
        Gradients { grads }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

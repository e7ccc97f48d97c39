//! Small MLP model: a two-layer tanh encoder, a one-hidden-layer projector
//! producing unit-norm embeddings, and a linear classifier head on the
//! encoder features.
//!
//! All parameters live in one flat vector. Gradients are accumulated into a
//! vector of the same layout, which is the space where update projection
//! happens.

mod batch;
pub mod checkpoint;

pub use batch::{Batch, Origin, Sample, SampleId};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot_unchecked, ensure_finite, log_sum_exp, norm, softmax};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Width of both encoder layers; also the feature dimension.
    pub encoder_hidden: usize,
    pub projector_hidden: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: 64,
            projector_hidden: 64,
            embed_dim: 16,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("projector_hidden", self.projector_hidden),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// `(out, in)` shape of every dense layer in flattening order.
    pub fn layer_shapes(&self) -> [(usize, usize); LAYER_COUNT] {
        [
            (self.encoder_hidden, self.input_dim),
            (self.encoder_hidden, self.encoder_hidden),
            (self.projector_hidden, self.encoder_hidden),
            (self.embed_dim, self.projector_hidden),
            (self.num_classes, self.encoder_hidden),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

pub(crate) const LAYER_COUNT: usize = 5;
const ENC1: usize = 0;
const ENC2: usize = 1;
const PROJ1: usize = 2;
const PROJ2: usize = 3;
const CLS: usize = 4;

/// Parameter groups of the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Projector,
    Classifier,
}

#[derive(Debug, Clone, Copy)]
struct DenseView<'a> {
    weight: &'a [f64],
    bias: &'a [f64],
    cols: usize,
}

impl DenseView<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(r, b)| b + dot_unchecked(&self.weight[r * self.cols..(r + 1) * self.cols], x))
            .collect()
    }

    /// `Wᵀ d`
    fn apply_t(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, dr) in d.iter().enumerate() {
            axpy(*dr, &self.weight[r * self.cols..(r + 1) * self.cols], &mut out);
        }
        out
    }
}

fn tanh_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ProjectionTrace {
    pub hidden: Vec<f64>,
    pub raw_norm: f64,
    pub embedding: Vec<f64>,
}

/// Model parameters: architecture plus a flat parameter vector of length P.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    offsets: [usize; LAYER_COUNT],
    theta: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for (layer, (rows, cols)) in config.layer_shapes().into_iter().enumerate() {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let start = params.offsets[layer];
            for w in &mut params.theta[start..start + rows * cols] {
                *w = rng.random_range(-a..=a);
            }
        }
        Ok(params)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut offsets = [0; LAYER_COUNT];
        let mut at = 0;
        for (layer, (rows, cols)) in config.layer_shapes().into_iter().enumerate() {
            offsets[layer] = at;
            at += rows * cols + rows;
        }
        Ok(Self {
            config,
            offsets,
            theta: vec![0.0; at],
        })
    }

    /// Rebuilds parameters from a flat vector produced by [`flatten`](Self::flatten).
    pub fn from_flat(config: ModelConfig, flat: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        if flat.len() != params.theta.len() {
            return Err(Error::dim(params.theta.len(), flat.len()));
        }
        params.theta = flat;
        Ok(params)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn part_range(&self, part: Part) -> Range<usize> {
        match part {
            Part::Encoder => self.offsets[ENC1]..self.offsets[PROJ1],
            Part::Projector => self.offsets[PROJ1]..self.offsets[CLS],
            Part::Classifier => self.offsets[CLS]..self.theta.len(),
        }
    }

    /// Range of layer `layer`'s weights (row-major) and then its bias.
    pub fn layer_range(&self, layer: usize) -> (Range<usize>, Range<usize>) {
        let (rows, cols) = self.config.layer_shapes()[layer];
        let w = self.offsets[layer]..self.offsets[layer] + rows * cols;
        let b = w.end..w.end + rows;
        (w, b)
    }

    /// Mutable view of one layer's `(weights, bias)`.
    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.layer_range(layer);
        let (head, tail) = self.theta.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.len()])
    }

    fn view(&self, layer: usize) -> DenseView<'_> {
        let (w, b) = self.layer_range(layer);
        DenseView {
            weight: &self.theta[w],
            bias: &self.theta[b],
            cols: self.config.layer_shapes()[layer].1,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::dim(self.config.input_dim, x.len()));
        }
        ensure_finite(x, "model input")
    }

    pub(crate) fn encode_trace(&self, x: &[f64]) -> Trace {
        let mut hidden = self.view(ENC1).apply(x);
        tanh_in_place(&mut hidden);
        let mut features = self.view(ENC2).apply(&hidden);
        tanh_in_place(&mut features);
        Trace { hidden, features }
    }

    pub(crate) fn project_trace(&self, features: &[f64]) -> Result<ProjectionTrace> {
        let mut hidden = self.view(PROJ1).apply(features);
        tanh_in_place(&mut hidden);
        let raw = self.view(PROJ2).apply(&hidden);
        let raw_norm = norm(&raw);
        if !raw_norm.is_finite() {
            return Err(Error::NonFinite("projector output"));
        }
        if raw_norm == 0.0 {
            return Err(Error::Degenerate("projector output is the zero vector".into()));
        }
        let embedding = raw.iter().map(|v| v / raw_norm).collect();
        Ok(ProjectionTrace {
            hidden,
            raw_norm,
            embedding,
        })
    }

    /// Encoder features `f(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.encode_trace(x).features)
    }

    /// Unit-norm embedding `q(f(x))`.
    pub fn encode_project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.encode_trace(x);
        Ok(self.project_trace(&trace.features)?.embedding)
    }

    /// Class logits computed from encoder features.
    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.encode_trace(x);
        Ok(self.view(CLS).apply(&trace.features))
    }

    /// Argmax of the logits, ties resolved towards the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.classify(x)?;
        let mut best = 0;
        for (c, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Accumulates the gradient of a dense layer into `grad` and returns the
    /// gradient with respect to the layer input.
    fn backprop_dense(&self, layer: usize, input: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (w, b) = self.layer_range(layer);
        let cols = input.len();
        let gw = &mut grad[w];
        for (r, dr) in d_out.iter().enumerate() {
            if *dr != 0.0 {
                axpy(*dr, input, &mut gw[r * cols..(r + 1) * cols]);
            }
        }
        axpy(1.0, d_out, &mut grad[b]);
        self.view(layer).apply_t(d_out)
    }

    /// Backpropagates `d_features` through the encoder into `grad`.
    pub(crate) fn backprop_encoder(&self, x: &[f64], trace: &Trace, d_features: &[f64], grad: &mut [f64]) {
        let d_pre2: Vec<f64> = d_features
            .iter()
            .zip(&trace.features)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        let d_hidden = self.backprop_dense(ENC2, &trace.hidden, &d_pre2, grad);
        let d_pre1: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        self.backprop_dense(ENC1, x, &d_pre1, grad);
    }

    /// Backpropagates `d_embedding` (gradient w.r.t. the normalized embedding)
    /// through normalization and the projector. Returns the gradient w.r.t.
    /// the encoder features.
    pub(crate) fn backprop_projector(
        &self,
        features: &[f64],
        proj: &ProjectionTrace,
        d_embedding: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        // d(z/|z|)/dz = (I - q qᵀ)/|z|
        let q = &proj.embedding;
        let qd = dot_unchecked(q, d_embedding);
        let d_raw: Vec<f64> = d_embedding
            .iter()
            .zip(q)
            .map(|(d, qi)| (d - qi * qd) / proj.raw_norm)
            .collect();
        let d_hidden = self.backprop_dense(PROJ2, &proj.hidden, &d_raw, grad);
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&proj.hidden)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        self.backprop_dense(PROJ1, features, &d_pre, grad)
    }

    /// Mean softmax cross-entropy over a labeled batch and its gradient.
    pub fn ce_loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.len()];
        if batch.is_empty() {
            return Ok((0.0, grad));
        }
        let inv_n = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for sample in batch.samples() {
            let label = sample.label.ok_or_else(|| {
                Error::Contract(format!("sample {} has no label", sample.id.0))
            })?;
            if label >= self.config.num_classes {
                return Err(Error::Contract(format!(
                    "label {label} out of range for {} classes",
                    self.config.num_classes
                )));
            }
            self.check_input(&sample.input)?;
            let trace = self.encode_trace(&sample.input);
            let logits = self.view(CLS).apply(&trace.features);
            ensure_finite(&logits, "logits")?;
            let probs = softmax(&logits);
            loss -= (logits[label] - log_sum_exp(&logits)) * inv_n;
            let d_logits: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| (p - if c == label { 1.0 } else { 0.0 }) * inv_n)
                .collect();
            let d_features = self.backprop_dense(CLS, &trace.features, &d_logits, &mut grad);
            self.backprop_encoder(&sample.input, &trace, &d_features, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Returns `params - lr * w`.
    pub fn sgd_step(&self, w: &[f64], lr: f64) -> Result<ModelParams> {
        if w.len() != self.len() {
            return Err(Error::dim(self.len(), w.len()));
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {lr}")));
        }
        ensure_finite(w, "update vector")?;
        let mut next = self.clone();
        axpy(-lr, w, &mut next.theta);
        Ok(next)
    }

    /// Zeroes the coordinates of `grad` that belong to `part`.
    pub fn mask_part(&self, grad: &mut [f64], part: Part) {
        for g in &mut grad[self.part_range(part)] {
            *g = 0.0;
        }
    }
}

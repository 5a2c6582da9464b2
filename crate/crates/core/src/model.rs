//! Feed-forward score model with last-layer Monte-Carlo dropout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngState};

/// Raw, non-normalized per-answer scores for one instance.
pub type ScoreVector = DenseVector;

pub const CHECKPOINT_FORMAT: &str = "rankdistill-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
}

/// One affine layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: DenseMatrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: DenseVector::zeros(self.bias.len()),
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.values().iter().chain(self.bias.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    dropout_rate: f64,
}

/// Parameter-shaped gradient (or momentum buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub layers: Vec<Layer>,
}

impl ModelGradient {
    pub fn zeros_like(model: &ScoreModel) -> Self {
        ModelGradient { layers: model.layers.iter().map(Layer::zeros_like).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(Layer::params)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::params).all(|x| x.is_finite())
    }

    /// `self += scale * other`; shapes must agree.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.values_mut().iter_mut().zip(b.weights.values()) {
                *x += scale * y;
            }
            a.bias.axpy(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.values_mut().iter_mut().for_each(|x| *x *= s);
            l.bias.scale(s);
        }
    }

    /// Flattened parameters in layer order (weights then bias per layer).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).copied().collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: ScoreModel,
}

impl ScoreModel {
    /// Builds a model from explicit layers, checking that shapes compose.
    pub fn from_layers(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(arg_err("model needs at least one layer"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(arg_err(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(dim_err(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && l.weights.cols() != layers[i - 1].weights.rows() {
                return Err(dim_err(format!("layer {i}: input width mismatch")));
            }
        }
        Ok(ScoreModel { layers, hidden_activation: Activation::Relu, dropout_rate })
    }

    /// He-initialized MLP `input_dim → hidden… → num_answers` with zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        num_answers: usize,
        dropout_rate: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if input_dim == 0 || num_answers == 0 || hidden.contains(&0) {
            return Err(arg_err("layer widths must be positive"));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(num_answers);
        let layers = widths
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                Layer {
                    weights: DenseMatrix::from_fn(w[1], w[0], |_, _| std * rng.normal()),
                    bias: DenseVector::zeros(w[1]),
                }
            })
            .collect();
        ScoreModel::from_layers(layers, dropout_rate)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn num_answers(&self) -> usize {
        self.layers.last().map(|l| l.weights.rows()).unwrap_or(0)
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn with_dropout_rate(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(arg_err(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.values().len() + l.bias.len()).sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(dim_err(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        Ok(())
    }

    /// Activations entering each layer; the last entry feeds the output layer.
    fn layer_inputs(&self, features: &[f64]) -> Result<Vec<DenseVector>> {
        self.check_input(features)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(DenseVector::from(features.to_vec()));
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut z = layer.weights.matvec(inputs.last().unwrap())?;
            z.axpy(1.0, &layer.bias);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            inputs.push(z);
        }
        Ok(inputs)
    }

    fn output_layer(&self, input: &[f64]) -> Result<ScoreVector> {
        let last = self.layers.last().unwrap();
        let mut s = last.weights.matvec(input)?;
        s.axpy(1.0, &last.bias);
        Ok(s)
    }

    /// Deterministic scores (dropout disabled).
    pub fn forward(&self, features: &[f64]) -> Result<ScoreVector> {
        let inputs = self.layer_inputs(features)?;
        self.output_layer(inputs.last().unwrap())
    }

    /// `passes` stochastic score vectors with inverted dropout applied to the
    /// output layer's input. Everything below the output layer runs once.
    pub fn mc_dropout_scores(
        &self,
        features: &[f64],
        passes: usize,
        rng: &mut RngState,
    ) -> Result<Vec<ScoreVector>> {
        if passes == 0 {
            return Err(arg_err("MC-dropout needs at least one pass"));
        }
        let inputs = self.layer_inputs(features)?;
        let hidden = inputs.last().unwrap();
        let keep = 1.0 - self.dropout_rate;
        let mut masked = hidden.clone();
        (0..passes)
            .map(|_| {
                for (m, &h) in masked.iter_mut().zip(hidden.iter()) {
                    *m = if self.dropout_rate > 0.0 && !rng.bernoulli(keep) {
                        0.0
                    } else {
                        h / keep
                    };
                }
                self.output_layer(&masked)
            })
            .collect()
    }

    /// Gradient of `⟨forward(features), upstream⟩` w.r.t. every parameter.
    pub fn backward(&self, features: &[f64], upstream: &[f64]) -> Result<ModelGradient> {
        if upstream.len() != self.num_answers() {
            return Err(dim_err(format!(
                "upstream gradient has {} entries, model has {} answers",
                upstream.len(),
                self.num_answers()
            )));
        }
        let inputs = self.layer_inputs(features)?;
        let mut grad = ModelGradient::zeros_like(self);
        let mut delta = DenseVector::from(upstream.to_vec());
        for l in (0..self.layers.len()).rev() {
            let g = &mut grad.layers[l];
            g.weights.add_outer(1.0, &delta, &inputs[l]);
            g.bias.axpy(1.0, &delta);
            if l > 0 {
                let mut prev = self.layers[l].weights.matvec_transposed(&delta)?;
                // inputs[l] is relu(z); its derivative is 1 where positive.
                for (d, &a) in prev.iter_mut().zip(inputs[l].iter()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grad)
    }

    fn check_congruent(&self, grad: &ModelGradient) -> Result<()> {
        let ok = grad.layers.len() == self.layers.len()
            && grad.layers.iter().zip(&self.layers).all(|(g, l)| {
                g.weights.rows() == l.weights.rows()
                    && g.weights.cols() == l.weights.cols()
                    && g.bias.len() == l.bias.len()
            });
        if ok {
            Ok(())
        } else {
            Err(dim_err("gradient shape does not match model"))
        }
    }

    /// In-place `θ ← θ − lr·step`.
    fn apply(&mut self, lr: f64, step: &ModelGradient) {
        for (p, g) in self.layers.iter_mut().zip(&step.layers) {
            for (w, d) in p.weights.values_mut().iter_mut().zip(g.weights.values()) {
                *w -= lr * d;
            }
            p.bias.axpy(-lr, &g.bias);
        }
    }

    /// One plain SGD update with global-norm clipping.
    pub fn sgd_step(&self, grad: &ModelGradient, lr: f64, clip_norm: f64) -> Result<ScoreModel> {
        let mut next = self.clone();
        Sgd::new(0.0).step(&mut next, grad, lr, clip_norm, 0)?;
        Ok(next)
    }

    /// Loads parameters from a flat vector laid out as [`ModelGradient::flatten`].
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(dim_err("flat parameter vector has the wrong length"));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.values_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).copied().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a model checkpoint: {}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let m = ckpt.model;
        ScoreModel::from_layers(m.layers, m.dropout_rate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ScoreModel::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn checksum(&self) -> String {
        let bytes = self.to_json().expect("model serializes");
        hex_digest(bytes.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SGD with optional heavy-ball momentum and global-norm clipping.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Option<ModelGradient>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum, velocity: None }
    }

    /// Clips `grad` to `clip_norm`, folds it into the momentum buffer and
    /// updates `model`. `epoch` is only used to label errors.
    pub fn step(
        &mut self,
        model: &mut ScoreModel,
        grad: &ModelGradient,
        lr: f64,
        clip_norm: f64,
        epoch: usize,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(arg_err(format!("learning rate must be positive, got {lr}")));
        }
        model.check_congruent(grad)?;
        if !grad.is_finite() {
            return Err(Error::Training { epoch, reason: "non-finite gradient".into() });
        }
        let norm = grad.norm();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        if self.momentum == 0.0 {
            if scale == 1.0 {
                model.apply(lr, grad);
            } else {
                let mut g = grad.clone();
                g.scale(scale);
                model.apply(lr, &g);
            }
            return Ok(());
        }
        let v = self.velocity.get_or_insert_with(|| ModelGradient::zeros_like(model));
        v.scale(self.momentum);
        v.add_scaled(scale, grad);
        model.apply(lr, v);
        Ok(())
    }
}

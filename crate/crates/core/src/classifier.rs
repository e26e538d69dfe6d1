//! Multi-layer perceptron with a softmax output, trained on soft labels.
//!
//! The loss is the mean soft cross-entropy `-sum_k y_k log p_k` plus an optional
//! L2 penalty `0.5 * weight_decay * |W|^2` on weight matrices (biases are not
//! decayed). Parameters are `f64` in memory and `f32` on disk.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::embedding::{ClassVocabulary, LabeledEmbeddingSet, SoftLabeledSet};
use crate::error::{check_dim, Error, Result};
use crate::rng;

pub const MODEL_MAGIC: [u8; 4] = *b"MLPM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    /// Adaptive moment estimation with the usual `(0.9, 0.999, 1e-8)` constants.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" | "adaptive_moments" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Empty means softmax regression.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128],
            activation: Activation::Relu,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    dim: usize,
    vocab: ClassVocabulary,
    activation: Activation,
    layers: Vec<Layer>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Soft cross-entropy of `target` against the softmax of `logits`.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != 0.0)
        .map(|(lp, y)| -y * lp)
        .sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    /// Model with every parameter set to zero.
    pub fn zeros(dim: usize, vocab: ClassVocabulary, hidden_sizes: &[usize]) -> Self {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden_sizes);
        widths.push(vocab.len());
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self {
            dim,
            vocab,
            activation: Activation::Relu,
            layers,
        }
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(dim: usize, vocab: ClassVocabulary, config: &MlpConfig) -> Self {
        let mut model = Self::zeros(dim, vocab, &config.hidden_sizes);
        model.activation = config.activation;
        let mut rng = rng::stream(config.seed, &[rng::tag("mlp-init")]);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs.max(1) as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter count mismatch");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    /// Pre-activations of every layer for one input.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.forward(&input, &mut z);
            if i + 1 < self.layers.len() {
                input = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        Ok(self.forward_all(&x).pop().expect("at least one layer"))
    }

    pub fn predict_proba(&self, x: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        Ok(argmax_f64(&self.predict_proba(x)?))
    }

    /// Mean loss over a batch and its flat gradient (ordered as [`params`](Self::params)).
    pub fn loss_and_gradient(
        &self,
        inputs: &[&[f32]],
        targets: &[&[f32]],
        weight_decay: f64,
    ) -> (f64, Vec<f64>) {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect();
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            loss += self.accumulate(x, y, &mut grads);
        }
        let scale = 1.0 / inputs.len().max(1) as f64;
        loss *= scale;
        let mut flat = Vec::with_capacity(self.num_params());
        for (g, l) in grads.iter().zip(&self.layers) {
            flat.extend(g.weights.iter().zip(&l.weights).map(|(g, w)| g * scale + weight_decay * w));
            flat.extend(g.bias.iter().map(|g| g * scale));
            loss += 0.5 * weight_decay * l.weights.iter().map(|w| w * w).sum::<f64>();
        }
        (loss, flat)
    }

    /// Adds one example's unscaled gradient into `grads`; returns its loss.
    fn accumulate(&self, x: &[f32], y: &[f32], grads: &mut [Layer]) -> f64 {
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let pre = self.forward_all(&x);
        let logits = pre.last().expect("at least one layer");
        let log_p = log_softmax(logits);
        let mut loss = 0.0;
        // d loss / d logits = p - y when sum(y) = 1; scaled by sum(y) otherwise.
        let y_sum: f64 = y.iter().map(|&v| v as f64).sum();
        let mut delta: Vec<f64> = log_p
            .iter()
            .zip(y)
            .map(|(lp, &yk)| {
                let yk = yk as f64;
                if yk != 0.0 {
                    loss -= yk * lp;
                }
                y_sum * lp.exp() - yk
            })
            .collect();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let grad = &mut grads[li];
            let input: Vec<f64> = if li == 0 {
                x.clone()
            } else {
                pre[li - 1].iter().map(|v| v.max(0.0)).collect()
            };
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.bias[o] += d;
                let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, z) in next.iter_mut().zip(&pre[li - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        loss
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&MODEL_MAGIC)?;
        for v in [MODEL_VERSION, self.dim as u32, self.vocab.len() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for name in self.vocab.names() {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
        }
        let activation: u32 = match self.activation {
            Activation::Relu => 0,
        };
        out.write_all(&activation.to_le_bytes())?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            out.write_all(&(l.inputs as u32).to_le_bytes())?;
            out.write_all(&(l.outputs as u32).to_le_bytes())?;
            for w in l.weights.iter().chain(&l.bias) {
                out.write_all(&(*w as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION as usize {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let dim = r.u32()?;
        let k = r.u32()?;
        let mut names = Vec::new();
        for _ in 0..k {
            let len = r.u32()?;
            names.push(
                String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|e| Error::Format(format!("class name: {e}")))?,
            );
        }
        let vocab = ClassVocabulary::new(names)?;
        let activation = match r.u32()? {
            0 => Activation::Relu,
            other => return Err(Error::Format(format!("unknown activation code {other}"))),
        };
        let n_layers = r.u32()?;
        let mut layers = Vec::new();
        let mut expected_in = dim;
        for _ in 0..n_layers {
            let inputs = r.u32()?;
            let outputs = r.u32()?;
            if inputs != expected_in {
                return Err(Error::Format("layer shapes do not chain".into()));
            }
            expected_in = outputs;
            let count = inputs
                .checked_mul(outputs)
                .and_then(|w| w.checked_add(outputs))
                .ok_or_else(|| Error::Format("layer too large".into()))?;
            let values: Vec<f64> = r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            layers.push(Layer {
                inputs,
                outputs,
                weights: values[..inputs * outputs].to_vec(),
                bias: values[inputs * outputs..].to_vec(),
            });
        }
        if n_layers == 0 || expected_in != k {
            return Err(Error::Format("output layer width differs from class count".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(Self {
            dim,
            vocab,
            activation,
            layers,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

pub fn train(train_set: &SoftLabeledSet, config: &MlpConfig) -> Result<TrainedModel> {
    train_with_history(train_set, config).map(|(m, _)| m)
}

/// Trains and also returns the mean loss of every epoch.
pub fn train_with_history(
    train_set: &SoftLabeledSet,
    config: &MlpConfig,
) -> Result<(TrainedModel, Vec<f64>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut model = TrainedModel::init(train_set.dim(), train_set.vocab().clone(), config);
    let mut params = model.params();
    let mut adam = AdamState {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng::stream(config.seed, &[rng::tag("mlp-shuffle")]);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| train_set.vector(i)).collect();
            let ys: Vec<&[f32]> = batch.iter().map(|&i| train_set.soft_label(i)).collect();
            let (loss, grad) = model.loss_and_gradient(&xs, &ys, config.weight_decay);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            step(&mut params, &grad, &mut adam, config);
            model.set_params(&params);
        }
        let mean = epoch_loss / train_set.len() as f64;
        if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok((model, history))
}

fn step(params: &mut [f64], grad: &[f64], state: &mut AdamState, config: &MlpConfig) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            state.t += 1;
            let c1 = 1.0 - B1.powi(state.t);
            let c2 = 1.0 - B2.powi(state.t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = B1 * state.m[i] + (1.0 - B1) * g;
                state.v[i] = B2 * state.v[i] + (1.0 - B2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

/// Fraction of test examples whose argmax prediction matches the label.
pub fn evaluate(model: &TrainedModel, test_set: &LabeledEmbeddingSet) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyTest);
    }
    check_dim(model.dim(), test_set.dim())?;
    if model.vocab() != test_set.vocab() {
        return Err(Error::Vocab("model and test set vocabularies differ".into()));
    }
    let mut correct = 0usize;
    for (label, x) in test_set.iter() {
        if model.predict(x)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

//! Frame-level subject classifier and the snore embeddings taken from its
//! last hidden layer.
//!
//! Three phases:
//! * development: train a ReLU feed-forward network (4 x 128 hidden units,
//!   softmax over development subjects, dropout before the output layer,
//!   Adam) on stacked 50-frame MFCC contexts, one example per frame;
//! * enrollment: drop the output layer; an utterance embedding is the
//!   normalized sum of L2-normalized last-hidden activations over 15
//!   observations spaced 5 frames apart, and a subject embedding the
//!   normalized mean of its utterance embeddings;
//! * evaluation: test utterances go through the same extraction and are
//!   compared by cosine similarity.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{hex_prefix, observation_centers, stack_into, ContextLayout, FeatureMatrix};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Fully connected layer computing `x W + b` for row-vector inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// fan_in x fan_out
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-coefficient standardization applied to every frame of a stacked input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let all = FeatureMatrix::concat(matrices)?;
        if all.is_empty() {
            return Err(Error::EmptyDevelopmentSet);
        }
        let mean = all.frames.mean_axis(Axis(0)).expect("non-empty");
        let std = all.frames.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-8));
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: features.dim(),
            });
        }
        let mut out = features.clone();
        for mut row in out.frames.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// ReLU hidden layers followed by a softmax output layer, with dropout on
/// the last hidden activation during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkJson", try_from = "NetworkJson")]
pub struct EmbeddingNetwork {
    /// Hidden layers then the output layer.
    pub layers: Vec<Dense>,
    pub dropout_rate: f64,
    /// Output unit `i` corresponds to `subject_labels[i]`.
    pub subject_labels: Vec<String>,
    pub input_norm: Option<InputNorm>,
    pub context: ContextLayout,
}

/// Gradients for each layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

struct ForwardCache {
    /// Inputs to every layer (post-activation, post-dropout for the last).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

impl EmbeddingNetwork {
    /// He-uniform weights (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`), zero biases.
    pub fn init(dims: &[usize], dropout_rate: f64, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 3 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network needs an input, at least one hidden layer and an output, got {dims:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let n_out = *dims.last().expect("len >= 3");
        Ok(Self {
            layers,
            dropout_rate,
            subject_labels: (0..n_out).map(|i| i.to_string()).collect(),
            input_norm: None,
            context: ContextLayout::default(),
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights.nrows()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].weights.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Last hidden layer activations (inference mode), one row per input.
    pub fn hidden(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let (hidden, _) = self.layers.split_at(self.layers.len() - 1);
        let mut a = x.to_owned();
        for layer in hidden {
            a = affine(&a.view(), layer).mapv_into(relu);
        }
        Ok(a)
    }

    /// Softmax outputs (inference mode), one row per input.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.hidden(x)?;
        let mut z = affine(&h.view(), self.layers.last().expect("non-empty"));
        softmax_rows(&mut z);
        Ok(z)
    }

    /// `mask` multiplies the last hidden activation; entries are 0 or
    /// `1 / (1 - p)`. `None` disables dropout.
    fn forward_train(&self, x: ArrayView2<f64>, mask: Option<&Array2<f64>>) -> ForwardCache {
        let n_hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let z = affine(&a.view(), layer);
            inputs.push(a);
            a = z.mapv(relu);
            pre.push(z);
        }
        if let Some(m) = mask {
            a *= m;
        }
        let mut z = affine(&a.view(), &self.layers[n_hidden]);
        inputs.push(a);
        softmax_rows(&mut z);
        ForwardCache {
            inputs,
            pre,
            probs: z,
        }
    }

    /// Mean cross-entropy of a batch and its exact gradient with respect to
    /// every weight and bias. `labels` are class indices. With `mask` the
    /// dropout pattern is held fixed.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        mask: Option<&Array2<f64>>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        if labels.len() != x.nrows() || labels.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_outputs()) {
            return Err(Error::InvalidConfig(format!("label {bad} out of range")));
        }
        let cache = self.forward_train(x, mask);
        let b = x.nrows() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -cache.probs[[i, y]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / b;

        let mut delta = cache.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            delta[[i, y]] -= 1.0;
        }
        delta /= b;

        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        for l in (0..n).rev() {
            let input = &cache.inputs[l];
            grads.push(Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[l].weights.t());
            if l == n - 1 {
                if let Some(m) = mask {
                    upstream *= m;
                }
            }
            Zip::from(&mut upstream)
                .and(&cache.pre[l - 1])
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            delta = upstream;
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        mask: Option<&Array2<f64>>,
    ) -> Result<f64> {
        self.check_input(&x)?;
        let cache = self.forward_train(x, mask);
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -cache.probs[[i, y]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / x.nrows() as f64)
    }

    /// Normalized, context-stacked network inputs for the given centers.
    pub fn stacked_inputs(
        &self,
        features: &FeatureMatrix,
        centers: &[usize],
    ) -> Result<Array2<f64>> {
        let normalized;
        let source = match &self.input_norm {
            Some(norm) => {
                normalized = norm.apply(features)?;
                &normalized
            }
            None => features,
        };
        let width = self.context.width() * source.dim();
        if width != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: width,
            });
        }
        let mut flat = Vec::with_capacity(centers.len() * width);
        for &c in centers {
            stack_into(source, c, self.context, &mut flat)?;
        }
        Ok(Array2::from_shape_vec((centers.len(), width), flat).expect("stacked width"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("network", e))
    }

    pub fn fingerprint(&self) -> String {
        hex_prefix(&Sha256::digest(self.to_json().as_bytes()), 16)
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct NetworkJson {
    version: u32,
    dims: Vec<usize>,
    /// Row-major `dims[l] x dims[l + 1]` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    dropout_rate: f64,
    subject_label_order: Vec<String>,
    #[serde(default)]
    input_norm: Option<InputNorm>,
    #[serde(default)]
    context: ContextLayout,
}

impl From<EmbeddingNetwork> for NetworkJson {
    fn from(net: EmbeddingNetwork) -> Self {
        NetworkJson {
            version: NETWORK_FORMAT_VERSION,
            dims: net.dims(),
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.iter().copied().collect())
                .collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
            dropout_rate: net.dropout_rate,
            subject_label_order: net.subject_labels,
            input_norm: net.input_norm,
            context: net.context,
        }
    }
}

impl TryFrom<NetworkJson> for EmbeddingNetwork {
    type Error = Error;

    fn try_from(j: NetworkJson) -> Result<Self> {
        if j.version != NETWORK_FORMAT_VERSION {
            return Err(Error::parse(
                "network",
                format!("unsupported version {}", j.version),
            ));
        }
        let n = j.dims.len();
        if n < 3 || j.weights.len() != n - 1 || j.biases.len() != n - 1 {
            return Err(Error::parse("network", "layer count does not match dims"));
        }
        let layers = j
            .weights
            .into_iter()
            .zip(j.biases)
            .enumerate()
            .map(|(l, (w, b))| {
                let shape = (j.dims[l], j.dims[l + 1]);
                if b.len() != shape.1 {
                    return Err(Error::parse(
                        "network",
                        format!("bias {l} has wrong length"),
                    ));
                }
                Ok(Dense {
                    weights: Array2::from_shape_vec(shape, w).map_err(|_| {
                        Error::parse("network", format!("weights {l} have wrong size"))
                    })?,
                    bias: Array1::from(b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if j.subject_label_order.len() != j.dims[n - 1] {
            return Err(Error::parse(
                "network",
                "label order does not match output size",
            ));
        }
        Ok(Self {
            layers,
            dropout_rate: j.dropout_rate,
            subject_labels: j.subject_label_order,
            input_norm: j.input_norm,
            context: j.context,
        })
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn affine(x: &ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    x.dot(&layer.weights) + &layer.bias
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    /// Spacing between training observation centers; 1 uses every frame.
    pub observation_stride: usize,
    pub normalize_inputs: bool,
    pub context: ContextLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            seed: 0,
            hidden_layers: vec![128; 4],
            dropout_rate: 0.15,
            observation_stride: 1,
            normalize_inputs: true,
            context: ContextLayout::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.observation_stride == 0 {
            return bad("observation_stride must be >= 1");
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("need at least one non-empty hidden layer");
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(config: &TrainConfig, net: &EmbeddingNetwork) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn update(&mut self, net: &mut EmbeddingNetwork, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean training loss per epoch (with dropout active).
    pub epoch_loss: Vec<f64>,
    /// Accuracy over all training examples after the last epoch, dropout off.
    pub final_accuracy: f64,
    pub num_examples: usize,
}

/// Trains the classifier on development utterances grouped by subject.
/// Subjects are labelled in sorted order.
pub fn train_network(
    development: &BTreeMap<String, Vec<FeatureMatrix>>,
    config: &TrainConfig,
) -> Result<(EmbeddingNetwork, TrainHistory)> {
    config.validate()?;
    if development.len() < 2 {
        return Err(Error::TooFewSubjects(development.len()));
    }
    let all: Vec<&FeatureMatrix> = development
        .values()
        .flatten()
        .filter(|f| !f.is_empty())
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyDevelopmentSet);
    }
    let dim = all[0].dim();
    let input_norm = if config.normalize_inputs {
        Some(InputNorm::fit(all.iter().copied())?)
    } else {
        None
    };

    let mut utterances = Vec::new();
    let mut examples: Vec<(usize, usize, usize)> = Vec::new();
    for (label, mats) in development.values().enumerate() {
        for m in mats.iter().filter(|m| !m.is_empty()) {
            let m = match &input_norm {
                Some(norm) => norm.apply(m)?,
                None => m.clone(),
            };
            let u = utterances.len();
            examples.extend(
                (0..m.num_frames())
                    .step_by(config.observation_stride)
                    .map(|c| (u, c, label)),
            );
            utterances.push(m);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![config.context.width() * dim];
    dims.extend(&config.hidden_layers);
    dims.push(development.len());
    let mut net = EmbeddingNetwork::init(&dims, config.dropout_rate, &mut rng)?;
    net.subject_labels = development.keys().cloned().collect();
    net.context = config.context;

    let width = dims[0];
    let embed = *config.hidden_layers.last().expect("validated");
    let keep = 1.0 - config.dropout_rate;
    let mut adam = Adam::new(config, &net);
    let mut history = TrainHistory {
        num_examples: examples.len(),
        ..Default::default()
    };
    let build_batch = |batch: &[(usize, usize, usize)]| -> Result<(Array2<f64>, Vec<usize>)> {
        let mut flat = Vec::with_capacity(batch.len() * width);
        for &(u, c, _) in batch {
            stack_into(&utterances[u], c, config.context, &mut flat)?;
        }
        Ok((
            Array2::from_shape_vec((batch.len(), width), flat).expect("batch width"),
            batch.iter().map(|e| e.2).collect(),
        ))
    };

    for _ in 0..config.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in examples.chunks(config.batch_size) {
            let (x, labels) = build_batch(batch)?;
            let mask = (config.dropout_rate > 0.0).then(|| {
                Array2::from_shape_simple_fn((batch.len(), embed), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            let (loss, grads) = net.backward(x.view(), &labels, mask.as_ref())?;
            total += loss * batch.len() as f64;
            adam.update(&mut net, &grads);
        }
        history.epoch_loss.push(total / examples.len() as f64);
    }

    net.input_norm = input_norm;
    let mut correct = 0usize;
    let mut plain = net.clone();
    plain.input_norm = None;
    for batch in examples.chunks(512) {
        let (x, labels) = build_batch(batch)?;
        let probs = plain.predict(x.view())?;
        correct += probs
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(row, &y)| argmax(row.iter().copied()) == y)
            .count();
    }
    history.final_accuracy = correct as f64 / examples.len() as f64;
    Ok((net, history))
}

/// Index of the first maximum.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingLevel {
    Utterance,
    Subject,
}

/// Unit-norm identity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnoreEmbedding {
    pub vector: Vec<f64>,
    pub level: EmbeddingLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
}

impl SnoreEmbedding {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales to unit length; a (near-)zero vector is an error.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::NormalizationDegenerate);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// How per-observation vectors are combined before the final normalization.
/// Both give the same direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulate {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub observations: usize,
    pub stride: usize,
    pub accumulate: Accumulate,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            observations: 15,
            stride: 5,
            accumulate: Accumulate::Sum,
        }
    }
}

/// Utterance-level embedding from the last hidden layer over the selected
/// observations.
pub fn utterance_embedding(
    network: &EmbeddingNetwork,
    features: &FeatureMatrix,
    config: &EmbeddingConfig,
) -> Result<SnoreEmbedding> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureMatrix);
    }
    if config.observations == 0 {
        return Err(Error::InvalidConfig("observations must be >= 1".into()));
    }
    let centers = observation_centers(features.num_frames(), config.observations, config.stride);
    let x = network.stacked_inputs(features, &centers)?;
    let hidden = network.hidden(x.view())?;
    let mut acc = vec![0.0; hidden.ncols()];
    for row in hidden.rows() {
        let unit = l2_normalize(row.as_slice().expect("standard layout"))?;
        for (a, u) in acc.iter_mut().zip(unit) {
            *a += u;
        }
    }
    if config.accumulate == Accumulate::Mean {
        let n = hidden.nrows() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(SnoreEmbedding {
        vector: l2_normalize(&acc)?,
        level: EmbeddingLevel::Utterance,
        subject_id: None,
    })
}

/// Subject-level embedding: mean of the utterance embeddings, normalized.
pub fn subject_embedding(
    utterances: &[SnoreEmbedding],
    subject_id: &str,
) -> Result<SnoreEmbedding> {
    let first = utterances.first().ok_or(Error::EmptyInput)?;
    let dim = first.vector.len();
    let mut mean = vec![0.0; dim];
    for e in utterances {
        if e.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(&e.vector) {
            *m += v;
        }
    }
    let n = utterances.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(SnoreEmbedding {
        vector: l2_normalize(&mean)?,
        level: EmbeddingLevel::Subject,
        subject_id: Some(subject_id.to_string()),
    })
}

/// Writes `subject_id,e0..e{d-1}` rows.
pub fn write_embeddings_csv<W: Write>(
    mut out: W,
    rows: &[(String, &SnoreEmbedding)],
) -> std::io::Result<()> {
    let dim = rows.first().map_or(0, |(_, e)| e.vector.len());
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (subject, e) in rows {
        let cells: Vec<String> = e.vector.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(out, "{subject},{}", cells.join(","))?;
    }
    Ok(())
}

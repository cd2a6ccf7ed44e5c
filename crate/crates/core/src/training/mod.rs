//! Multinomial logistic regression with an optional frozen noise-adaptation layer.
//!
//! The base model predicts `p(y | x) = softmax(W x + b)`. On noisily labelled
//! data the prediction is pushed through the estimated noise matrix,
//! `p(ŷ = j | x) = Σ_i M[i][j] p(y = i | x)`, and the cross-entropy is taken
//! against the noisy label. Only `W` and `b` are trained; the matrix is never
//! updated.

mod blobs;
mod correlation;

pub use blobs::{noise_handling_trial, BlobsData, BlobsSpec, HandlingOutcome};
pub use correlation::{
    correlation_experiment, pearson, write_correlation_csv, CorrelationRow, CorrelationSetup,
    CorrelationTable, ExperimentSource, Metric, SchemeKind,
};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{micro_scores, per_class_f1, ParallelCorpus};
use crate::error::{Error, Result};
use crate::estimation::{LabelPair, LabelPairSet, LabelPool};
use crate::noise::{argmax, compose_into, NoiseMatrix, ProbabilityVector};
use crate::seed::stream;

/// Features with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    d: usize,
    k: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(k: usize, d: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != d * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: d * labels.len(),
                actual: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { d, k, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.d..(idx + 1) * self.d]
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            d: self.d,
            k: self.k,
            features: indices.iter().flat_map(|&i| self.x(i).iter().copied()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &LabeledSet) -> Result<Self> {
        if self.d != other.d || self.k != other.k {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: other.d,
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }
}

/// Instances carrying both a clean and a noisy label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    clean: LabeledSet,
    noisy: Vec<usize>,
}

impl PairedSet {
    pub fn new(clean: LabeledSet, noisy: Vec<usize>) -> Result<Self> {
        if noisy.len() != clean.len() {
            return Err(Error::DimensionMismatch {
                expected: clean.len(),
                actual: noisy.len(),
            });
        }
        if let Some(&label) = noisy.iter().find(|&&l| l >= clean.k) {
            return Err(Error::LabelOutOfRange { label, k: clean.k });
        }
        Ok(Self { clean, noisy })
    }

    pub fn from_corpus(corpus: &ParallelCorpus, label_set: usize) -> Result<Self> {
        let d = corpus.feature_dim();
        let features = corpus
            .instances()
            .iter()
            .flat_map(|i| i.features.iter().copied())
            .collect();
        let clean = LabeledSet::new(corpus.k(), d, features, corpus.clean_labels())?;
        Self::new(clean, corpus.noisy_labels(label_set)?)
    }

    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }

    pub fn k(&self) -> usize {
        self.clean.k
    }

    pub fn clean_view(&self) -> &LabeledSet {
        &self.clean
    }

    pub fn noisy_view(&self) -> LabeledSet {
        LabeledSet {
            labels: self.noisy.clone(),
            ..self.clean.clone()
        }
    }

    pub fn label_pool(&self) -> LabelPool {
        LabelPool::new(self.pair_set())
    }

    pub fn pair_set(&self) -> LabelPairSet {
        LabelPairSet::new(
            self.k(),
            self.clean
                .labels
                .iter()
                .zip(&self.noisy)
                .map(|(&c, &n)| LabelPair::new(c, n))
                .collect(),
        )
        .expect("labels validated on construction")
    }
}

/// `softmax(W x + b)` over `k` classes and `d` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    pub d: usize,
    pub k: usize,
    /// Row-major `k × d`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the model's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|g| *g *= s);
    }
}

impl LinearSoftmaxModel {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            d,
            k,
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.weights.len() != m.k * m.d || m.bias.len() != m.k {
            return Err(Error::invalid("model weights do not match its k and d"));
        }
        if m.weights.iter().chain(&m.bias).any(|w| !w.is_finite()) {
            return Err(Error::invalid("model has non-finite parameters"));
        }
        Ok(m)
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.k];
        self.logits_into(x, &mut z);
        z
    }

    fn logits_into(&self, x: &[f64], z: &mut [f64]) {
        for (c, zc) in z.iter_mut().enumerate() {
            let w = &self.weights[c * self.d..(c + 1) * self.d];
            *zc = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn posterior_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_into(x, out);
        softmax_in_place(out);
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn step(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Clean-label posterior of the base model.
pub fn forward_clean(model: &LinearSoftmaxModel, x: &[f64]) -> Result<ProbabilityVector> {
    model.check_x(x)?;
    let mut p = vec![0.0; model.k];
    model.posterior_into(x, &mut p);
    Ok(ProbabilityVector::new_unchecked(p))
}

/// Noisy-label posterior: the clean posterior composed with `m`.
pub fn forward_noisy(model: &LinearSoftmaxModel, m: &NoiseMatrix, x: &[f64]) -> Result<ProbabilityVector> {
    if m.k() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            actual: m.k(),
        });
    }
    let p = forward_clean(model, x)?;
    let mut q = vec![0.0; model.k];
    compose_into(p.as_slice(), m, &mut q);
    Ok(ProbabilityVector::new_unchecked(q))
}

struct Scratch {
    p: Vec<f64>,
}

/// Adds one example's gradient into `grad` and returns its loss.
///
/// Loss is `−ln max(q_y, clamp)` with `q = Mᵀ p` (or `q = p` without a
/// matrix). Below the clamp the loss is flat and contributes no gradient.
/// Otherwise `∂L/∂z_l = p_l − p_l M[l][y] / q_y`.
fn accumulate(
    model: &LinearSoftmaxModel,
    m: Option<&NoiseMatrix>,
    x: &[f64],
    y: usize,
    clamp: f64,
    scratch: &mut Scratch,
    grad: &mut Gradient,
) -> f64 {
    let p = &mut scratch.p;
    model.posterior_into(x, p);
    let q_y = match m {
        Some(m) => p.iter().zip(m.rows()).map(|(pi, row)| pi * row[y]).sum::<f64>(),
        None => p[y],
    };
    if q_y < clamp {
        return -clamp.ln();
    }
    let d = model.d;
    for l in 0..model.k {
        let g = match m {
            Some(m) => p[l] - p[l] * m.row(l)[y] / q_y,
            None => p[l] - if l == y { 1.0 } else { 0.0 },
        };
        grad.bias[l] += g;
        for (gw, xf) in grad.weights[l * d..(l + 1) * d].iter_mut().zip(x) {
            *gw += g * xf;
        }
    }
    -q_y.ln()
}

fn batch_gradient(
    model: &LinearSoftmaxModel,
    m: Option<&NoiseMatrix>,
    set: &LabeledSet,
    indices: &[usize],
    clamp: f64,
) -> (f64, Gradient) {
    let mut grad = Gradient::zeros(model.k, model.d);
    let mut scratch = Scratch { p: vec![0.0; model.k] };
    let mut loss = 0.0;
    for &i in indices {
        loss += accumulate(model, m, set.x(i), set.label(i), clamp, &mut scratch, &mut grad);
    }
    let n = indices.len() as f64;
    grad.scale(1.0 / n);
    (loss / n, grad)
}

pub const DEFAULT_LOG_EPSILON: f64 = 1e-12;

/// Mean clamped cross-entropy over `batch` and its gradient with respect to
/// the model parameters. With `m`, the loss is taken on the noise-composed
/// posterior.
pub fn loss_and_gradient(
    model: &LinearSoftmaxModel,
    m: Option<&NoiseMatrix>,
    batch: &[(&[f64], usize)],
    log_epsilon: f64,
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(m) = m {
        if m.k() != model.k {
            return Err(Error::DimensionMismatch {
                expected: model.k,
                actual: m.k(),
            });
        }
    }
    let mut grad = Gradient::zeros(model.k, model.d);
    let mut scratch = Scratch { p: vec![0.0; model.k] };
    let mut loss = 0.0;
    for &(x, y) in batch {
        model.check_x(x)?;
        if y >= model.k {
            return Err(Error::LabelOutOfRange { label: y, k: model.k });
        }
        loss += accumulate(model, m, x, y, log_epsilon, &mut scratch, &mut grad);
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Noisy instances per epoch as a multiple of the clean set size.
    pub noisy_multiplier: f64,
    /// Probability floor applied before the logarithm.
    pub log_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 32,
            noisy_multiplier: 15.0,
            log_epsilon: DEFAULT_LOG_EPSILON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.noisy_multiplier > 0.0 && self.log_epsilon > 0.0) {
            return Err(Error::invalid("learning rate, noisy multiplier and clamp must be positive"));
        }
        if self.log_epsilon > 1e-6 {
            return Err(Error::invalid("log-probability clamp must be at most 1e-6"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub clean_loss: f64,
    /// Absent when there was no noisy data.
    pub noisy_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearSoftmaxModel,
    pub trace: Vec<EpochLoss>,
    /// Epoch whose model was returned.
    pub selected_epoch: usize,
}

fn run_pass(
    model: &mut LinearSoftmaxModel,
    m: Option<&NoiseMatrix>,
    set: &LabeledSet,
    order: &[usize],
    config: &TrainConfig,
) -> f64 {
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let (loss, grad) = batch_gradient(model, m, set, chunk, config.log_epsilon);
        total += loss * chunk.len() as f64;
        model.step(&grad, config.learning_rate);
    }
    total / order.len() as f64
}

/// Alternating clean/noisy mini-batch gradient descent.
///
/// Each epoch makes one shuffled pass over `clean`, then one pass over a
/// fresh uniform subset of `noisy` with `noisy_multiplier · |clean|`
/// instances (capped at `|noisy|`). Noisy batches go through `noise` when
/// given and are treated as clean otherwise. With a `dev` set the epoch with
/// the best dev accuracy is returned (earliest on ties), otherwise the last.
pub fn train(
    init: LinearSoftmaxModel,
    clean: &LabeledSet,
    noisy: &LabeledSet,
    noise: Option<&NoiseMatrix>,
    dev: Option<&LabeledSet>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if clean.is_empty() {
        return Err(Error::invalid("the clean training set is empty"));
    }
    for set in [Some(clean), Some(noisy), dev].into_iter().flatten() {
        if set.d != init.d || set.k != init.k {
            return Err(Error::DimensionMismatch {
                expected: init.d,
                actual: set.d,
            });
        }
    }
    if let Some(m) = noise {
        if m.k() != init.k {
            return Err(Error::DimensionMismatch {
                expected: init.k,
                actual: m.k(),
            });
        }
    }

    let mut rng = stream(config.seed);
    let mut model = init;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LinearSoftmaxModel)> = None;
    let mut clean_order: Vec<usize> = (0..clean.len()).collect();
    let subset = ((config.noisy_multiplier * clean.len() as f64).round() as usize).min(noisy.len());

    for epoch in 0..config.epochs {
        clean_order.shuffle(&mut rng);
        let clean_loss = run_pass(&mut model, None, clean, &clean_order, config);
        let noisy_loss = (subset > 0).then(|| {
            let order = index::sample(&mut rng, noisy.len(), subset).into_vec();
            run_pass(&mut model, noise, noisy, &order, config)
        });
        let dev_accuracy = dev.map(|d| accuracy(&model, d));
        if let Some(acc) = dev_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
        }
        trace.push(EpochLoss {
            epoch,
            clean_loss,
            noisy_loss,
            dev_accuracy,
        });
    }
    let (model, selected_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, config.epochs - 1),
    };
    Ok(TrainOutcome {
        model,
        trace,
        selected_epoch,
    })
}

fn accuracy(model: &LinearSoftmaxModel, set: &LabeledSet) -> f64 {
    let correct = (0..set.len()).filter(|&i| model.predict(set.x(i)) == set.label(i)).count();
    correct as f64 / set.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Micro F1 excluding the non-entity class; equals accuracy without one.
    pub micro_f1_excl: f64,
    pub per_class_f1: Vec<f64>,
}

pub fn predictions(model: &LinearSoftmaxModel, set: &LabeledSet) -> Vec<usize> {
    (0..set.len()).map(|i| model.predict(set.x(i))).collect()
}

pub fn evaluate(model: &LinearSoftmaxModel, test: &LabeledSet, non_entity: Option<usize>) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if test.d != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            actual: test.d,
        });
    }
    let pred = predictions(model, test);
    let scores = micro_scores(test.labels(), &pred, non_entity)?;
    Ok(EvalResult {
        accuracy: scores.accuracy,
        micro_f1_excl: scores.f1,
        per_class_f1: per_class_f1(test.labels(), &pred, model.k),
    })
}

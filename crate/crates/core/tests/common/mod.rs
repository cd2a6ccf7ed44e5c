//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use noise_oracle::training::{loss_and_gradient, LinearSoftmaxModel, DEFAULT_LOG_EPSILON};
use noise_oracle::NoiseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// A random linear model, batch and (optionally) a noise matrix with rows
/// bounded away from zero, for gradient checks.
pub struct GradientCase {
    pub model: LinearSoftmaxModel,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
    pub noise: Option<NoiseMatrix>,
}

impl GradientCase {
    pub fn random(seed: u64, with_noise: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=8);
        let mut model = LinearSoftmaxModel::zeros(k, d);
        model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        model.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let n = rng.random_range(1..=6);
        let xs = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..n).map(|_| rng.random_range(0..k)).collect();
        let noise = with_noise.then(|| {
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect();
            NoiseMatrix::from_rows(&rows).unwrap()
        });
        Self { model, xs, ys, noise }
    }

    fn loss(&self, model: &LinearSoftmaxModel) -> f64 {
        let batch: Vec<(&[f64], usize)> = self.xs.iter().map(|x| x.as_slice()).zip(self.ys.iter().copied()).collect();
        loss_and_gradient(model, self.noise.as_ref(), &batch, DEFAULT_LOG_EPSILON).unwrap().0
    }

    /// Largest relative deviation between the analytic gradient and central
    /// differences, with magnitudes below `1e-6` treated as `1e-6`.
    pub fn max_relative_error(&self) -> f64 {
        let batch: Vec<(&[f64], usize)> = self.xs.iter().map(|x| x.as_slice()).zip(self.ys.iter().copied()).collect();
        let (_, grad) = loss_and_gradient(&self.model, self.noise.as_ref(), &batch, DEFAULT_LOG_EPSILON).unwrap();
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        let n_w = self.model.weights.len();
        let mut worst: f64 = 0.0;
        for (p, &a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut m = self.model.clone();
                if p < n_w {
                    m.weights[p] += delta;
                } else {
                    m.bias[p - n_w] += delta;
                }
                self.loss(&m)
            };
            let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
        worst
    }
}

/// Reported precision, recall and F1 percentages of the seven NoisyNER label sets.
pub const PRINTED_QUALITY: [(f64, f64, f64); 7] = [
    (67.0, 18.0, 28.0),
    (73.0, 27.0, 39.0),
    (37.0, 31.0, 34.0),
    (75.0, 27.0, 40.0),
    (48.0, 41.0, 44.0),
    (53.0, 41.0, 46.0),
    (59.0, 49.0, 54.0),
];

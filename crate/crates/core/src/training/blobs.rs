//! Gaussian-blobs benchmark with synthetic label noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, LabeledSet, LinearSoftmaxModel, PairedSet, TrainConfig};
use crate::error::{Error, Result};
use crate::estimation::{estimate_noise_matrix, squared_error, Replacement};
use crate::noise::{corrupt_labels, ClassPrior, NoiseMatrix, NoiseSpec};
use crate::seed::{derive_seed, derive_stream};

/// Isotropic Gaussian classes with a shared spread, corrupted by a noise process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub centers: Vec<Vec<f64>>,
    pub spread: f64,
    pub prior: ClassPrior,
    pub noise: NoiseSpec,
    /// Instances carrying both labels; the noisy training set and the pool
    /// the clean sample is drawn from.
    pub pool_size: usize,
    pub test_size: usize,
    /// Class distribution of the test set; the training prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_prior: Option<ClassPrior>,
}

impl BlobsSpec {
    /// Three overlapping, unevenly sized classes in the plane, 3000 noisy
    /// instances under uniform noise at `ε = 0.6`. The test set is
    /// class-balanced, so accuracy weighs the rare classes as much as the
    /// frequent one.
    pub fn standard() -> Self {
        Self {
            centers: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 1.7]],
            spread: 1.0,
            prior: ClassPrior::new(vec![0.6, 0.3, 0.1]).expect("valid prior"),
            noise: NoiseSpec::Uniform { k: 3, epsilon: 0.6 },
            pool_size: 3000,
            test_size: 3000,
            test_prior: Some(ClassPrior::uniform(3).expect("valid prior")),
        }
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn d(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn truth(&self) -> Result<NoiseMatrix> {
        self.noise.build()
    }

    fn check(&self) -> Result<()> {
        let (k, d) = (self.k(), self.d());
        if k < 2 || d == 0 || self.centers.iter().any(|c| c.len() != d) {
            return Err(Error::invalid("blob centers must be at least two points of equal dimension"));
        }
        for kk in [Some(self.prior.k()), Some(self.noise.k()), self.test_prior.as_ref().map(ClassPrior::k)]
            .into_iter()
            .flatten()
        {
            if kk != k {
                return Err(Error::DimensionMismatch { expected: k, actual: kk });
            }
        }
        if !(self.spread > 0.0) {
            return Err(Error::invalid("blob spread must be positive"));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, prior: &ClassPrior, n: usize, rng: &mut R) -> LabeledSet {
        let (k, d) = (self.k(), self.d());
        let cdf: Vec<f64> = prior
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let c = cdf[..k - 1].iter().position(|&v| u < v).unwrap_or(k - 1);
            for &mu in &self.centers[c] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(mu + self.spread * z);
            }
            labels.push(c);
        }
        LabeledSet::new(k, d, features, labels).expect("generated data is consistent")
    }

    /// Deterministic realization for `seed`.
    pub fn generate(&self, seed: u64) -> Result<BlobsData> {
        self.check()?;
        let truth = self.truth()?;
        let mut rng = derive_stream(seed, &[0]);
        let clean = self.draw(&self.prior, self.pool_size, &mut rng);
        let noisy = corrupt_labels(clean.labels(), &truth, &mut derive_stream(seed, &[1]))?;
        let test_prior = self.test_prior.as_ref().unwrap_or(&self.prior);
        let test = self.draw(test_prior, self.test_size, &mut derive_stream(seed, &[2]));
        Ok(BlobsData {
            pool: PairedSet::new(clean, noisy)?,
            test,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlobsData {
    pub pool: PairedSet,
    /// Clean labels only.
    pub test: LabeledSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandlingOutcome {
    pub handled_accuracy: f64,
    pub naive_accuracy: f64,
    /// Squared error of the estimate used by the handled arm.
    pub estimate_se: f64,
}

/// Trains the same clean sample twice on one realization: once with the
/// estimated noise layer on the noisy pass, once treating noisy labels as
/// clean. `clean_budget` instances are drawn without replacement from the pool.
pub fn noise_handling_trial(
    spec: &BlobsSpec,
    clean_budget: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<HandlingOutcome> {
    let data = spec.generate(derive_seed(seed, &[0]))?;
    let pool = data.pool.label_pool();
    let idx = pool.variable_indices(clean_budget, Replacement::Without, &mut derive_stream(seed, &[1]))?;
    let estimate = estimate_noise_matrix(&pool.select(&idx));
    let (matrix, _) = estimate.to_training_matrix()?;
    let clean = data.pool.clean_view().subset(&idx);
    let noisy = data.pool.noisy_view();
    let cfg = TrainConfig {
        seed: derive_seed(seed, &[2]),
        ..config.clone()
    };
    let init = LinearSoftmaxModel::zeros(spec.k(), spec.d());
    let handled = train(init.clone(), &clean, &noisy, Some(&matrix), None, &cfg)?;
    let naive = train(init, &clean, &noisy, None, None, &cfg)?;
    Ok(HandlingOutcome {
        handled_accuracy: evaluate(&handled.model, &data.test, None)?.accuracy,
        naive_accuracy: evaluate(&naive.model, &data.test, None)?.accuracy,
        estimate_se: squared_error(&spec.truth()?, &estimate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = BlobsSpec {
            pool_size: 100,
            test_size: 50,
            ..BlobsSpec::standard()
        };
        let a = spec.generate(3).unwrap();
        let b = spec.generate(3).unwrap();
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.test, b.test);
        assert_eq!(a.pool.len(), 100);
        assert_eq!(a.test.len(), 50);
        assert_ne!(spec.generate(4).unwrap().pool, a.pool);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = BlobsSpec::standard();
        spec.centers.pop();
        assert!(spec.generate(0).is_err());
        let spec = BlobsSpec {
            spread: 0.0,
            ..BlobsSpec::standard()
        };
        assert!(spec.generate(0).is_err());
    }
}

//! Noise-layer training: gradient checks and structural properties.

mod common;

use common::GradientCase;
use noise_oracle::noise::{uniform_noise, NoiseLevel};
use noise_oracle::training::{forward_clean, forward_noisy, train, LabeledSet, LinearSoftmaxModel, TrainConfig};
use noise_oracle::NoiseMatrix;
use proptest::prelude::*;

fn toy_sets(seed: u64) -> (LabeledSet, LabeledSet) {
    let spec = noise_oracle::training::BlobsSpec {
        pool_size: 400,
        test_size: 10,
        ..noise_oracle::training::BlobsSpec::standard()
    };
    let data = spec.generate(seed).unwrap();
    let clean = data.pool.clean_view().subset(&(0..40).collect::<Vec<_>>());
    (clean, data.pool.noisy_view())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_layer_gradient_matches_finite_differences(seed in any::<u64>()) {
        let case = GradientCase::random(seed, true);
        let err = case.max_relative_error();
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn plain_gradient_matches_finite_differences(seed in any::<u64>()) {
        let case = GradientCase::random(seed, false);
        let err = case.max_relative_error();
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn posteriors_stay_on_the_simplex(seed in any::<u64>()) {
        let case = GradientCase::random(seed, true);
        let m = case.noise.as_ref().unwrap();
        for x in &case.xs {
            let p = forward_clean(&case.model, x).unwrap();
            let q = forward_noisy(&case.model, m, x).unwrap();
            for v in [p.as_slice(), q.as_slice()] {
                prop_assert!(v.iter().all(|&e| (0.0..=1.0).contains(&e)));
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // q_j = Σ_i p_i M_ij
            for j in 0..m.k() {
                let want: f64 = (0..m.k()).map(|i| p.as_slice()[i] * m.row(i)[j]).sum();
                prop_assert!((q.as_slice()[j] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identity_layer_training_matches_plain_training() {
    let (clean, noisy) = toy_sets(5);
    let cfg = TrainConfig { epochs: 5, seed: 11, ..TrainConfig::default() };
    let init = LinearSoftmaxModel::zeros(3, 2);
    let plain = train(init.clone(), &clean, &noisy, None, None, &cfg).unwrap();
    let with_identity = train(init, &clean, &noisy, Some(&NoiseMatrix::identity(3).unwrap()), None, &cfg).unwrap();
    assert_eq!(plain, with_identity);
}

#[test]
fn noise_matrix_is_not_updated_by_training() {
    let (clean, noisy) = toy_sets(6);
    let m = uniform_noise(3, NoiseLevel::new(0.6).unwrap()).unwrap();
    let before = m.to_json();
    let cfg = TrainConfig { epochs: 3, seed: 2, ..TrainConfig::default() };
    train(LinearSoftmaxModel::zeros(3, 2), &clean, &noisy, Some(&m), None, &cfg).unwrap();
    assert_eq!(m.to_json(), before);
}

#[test]
fn training_is_deterministic_in_its_seed() {
    let (clean, noisy) = toy_sets(7);
    let m = uniform_noise(3, NoiseLevel::new(0.6).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 4, seed: 99, ..TrainConfig::default() };
    let a = train(LinearSoftmaxModel::zeros(3, 2), &clean, &noisy, Some(&m), None, &cfg).unwrap();
    let b = train(LinearSoftmaxModel::zeros(3, 2), &clean, &noisy, Some(&m), None, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 4);
    assert!(a.trace.iter().all(|e| e.noisy_loss.is_some()));
}

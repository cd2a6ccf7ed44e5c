//! Properties of the noise model, label corruption and the count-ratio estimate.

use proptest::prelude::*;

use noise_oracle::estimation::{count_matrix, estimate_noise_matrix, squared_error, LabelPairSet, LabelPool, Replacement};
use noise_oracle::noise::{
    compose_noisy_posterior, corrupt_labels, multi_flip_mnist, single_flip_noise, uniform_noise, validate, FlipSpec,
    NoiseLevel, NoiseMatrix, ProbabilityVector,
};
use noise_oracle::seed::{derive_stream, stream};
use noise_oracle::theory::expected_error_fixed;

fn stochastic_matrix(k: usize) -> impl Strategy<Value = NoiseMatrix> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), k).prop_filter_map("degenerate row", |rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        NoiseMatrix::from_rows(&rows).ok()
    })
}

fn simplex(k: usize) -> impl Strategy<Value = ProbabilityVector> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("zero vector", |v| {
        let s: f64 = v.iter().sum();
        ProbabilityVector::new(v.into_iter().map(|x| x / s).collect()).ok()
    })
}

/// A flip spec on `k` classes: each source gets at most one other target.
fn flip_spec(k: usize) -> impl Strategy<Value = FlipSpec> {
    prop::collection::vec(prop::option::of(1..k), k).prop_map(move |offsets| {
        let flips: Vec<(usize, usize)> = offsets
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.map(|d| (i, (i + d) % k)))
            .collect();
        FlipSpec::new(k, &flips).unwrap()
    })
}

proptest! {
    #[test]
    fn generators_produce_valid_matrices(
        (k, spec) in (2usize..40).prop_flat_map(|k| (Just(k), flip_spec(k))),
        eps in 0.0f64..=1.0,
    ) {
        let eps = NoiseLevel::new(eps).unwrap();
        prop_assert!(validate(&uniform_noise(k, eps).unwrap().to_rows()).is_ok());
        prop_assert!(validate(&single_flip_noise(k, eps, &spec).unwrap().to_rows()).is_ok());
        prop_assert!(validate(&multi_flip_mnist(eps).unwrap().to_rows()).is_ok());
    }

    #[test]
    fn composition_stays_on_the_simplex((m, p) in (2usize..12).prop_flat_map(|k| (stochastic_matrix(k), simplex(k)))) {
        let q = compose_noisy_posterior(&p, &m).unwrap();
        prop_assert!(q.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn composition_is_linear(
        (m, p, q) in (2usize..12).prop_flat_map(|k| (stochastic_matrix(k), simplex(k), simplex(k))),
        alpha in 0.0f64..=1.0,
    ) {
        let mix: Vec<f64> = p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let lhs = compose_noisy_posterior(&ProbabilityVector::new(mix).unwrap(), &m).unwrap();
        let cp = compose_noisy_posterior(&p, &m).unwrap();
        let cq = compose_noisy_posterior(&q, &m).unwrap();
        for j in 0..m.k() {
            let rhs = alpha * cp.as_slice()[j] + (1.0 - alpha) * cq.as_slice()[j];
            prop_assert!((lhs.as_slice()[j] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_json_round_trips_bit_exactly(m in (2usize..10).prop_flat_map(stochastic_matrix)) {
        let back = NoiseMatrix::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_sample_recovers_requested_counts(
        per_class in prop::collection::vec(0usize..30, 2..6),
        seed in any::<u64>(),
        without in any::<bool>(),
    ) {
        let k = per_class.len();
        let pairs: Vec<(usize, usize)> = (0..60 * k).map(|i| (i % k, (i / k) % k)).collect();
        let pool = LabelPool::new(LabelPairSet::from_tuples(k, &pairs).unwrap());
        let mode = if without { Replacement::Without } else { Replacement::With };
        let idx = pool.fixed_indices(&per_class, mode, &mut stream(seed)).unwrap();
        let counts = count_matrix(&pool.select(&idx));
        prop_assert_eq!(counts.per_class.iter().map(|&c| c as usize).collect::<Vec<_>>(), per_class);
    }

    #[test]
    fn estimated_rows_with_data_sum_to_one(
        pairs in (2usize..8).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 0..200))),
    ) {
        let (k, pairs) = pairs;
        let est = estimate_noise_matrix(&LabelPairSet::from_tuples(k, &pairs).unwrap());
        for i in 0..k {
            let s: f64 = est.row(i).iter().sum();
            if est.empty_rows().contains(&i) {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() <= 4.0 * f64::EPSILON, "row {} sums to {}", i, s);
            }
        }
    }
}

#[test]
fn corruption_frequencies_within_three_binomial_deviations() {
    let m = NoiseMatrix::from_rows([[0.55, 0.3, 0.15, 0.0], [0.1, 0.7, 0.1, 0.1], [0.0, 0.0, 1.0, 0.0], [0.25, 0.25, 0.25, 0.25]])
        .unwrap();
    let per_class = 1_000_000usize;
    for i in 0..m.k() {
        let labels = vec![i; per_class];
        let noisy = corrupt_labels(&labels, &m, &mut derive_stream(31, &[i as u64])).unwrap();
        let mut counts = [0usize; 4];
        for l in noisy {
            counts[l] += 1;
        }
        for j in 0..m.k() {
            let p = m.row(i)[j];
            let freq = counts[j] as f64 / per_class as f64;
            let sd = (p * (1.0 - p) / per_class as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * sd, "entry ({i},{j}): {freq} vs {p}");
        }
    }
}

#[test]
fn estimate_converges_with_large_fixed_samples() {
    let m = multi_flip_mnist(NoiseLevel::new(0.4).unwrap()).unwrap();
    let n = 100_000usize;
    let mut set = LabelPairSet::empty(10);
    for i in 0..10 {
        let noisy = corrupt_labels(&vec![i; n], &m, &mut derive_stream(5, &[i as u64])).unwrap();
        for j in noisy {
            set.push(noise_oracle::LabelPair::new(i, j)).unwrap();
        }
    }
    let se = squared_error(&m, &estimate_noise_matrix(&set)).unwrap();
    let expected = expected_error_fixed(&m, &[n; 10]).unwrap().total;
    assert!(se < 10.0 * expected, "SE {se} vs expected {expected}");
}

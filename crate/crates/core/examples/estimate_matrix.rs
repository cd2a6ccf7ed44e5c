// Estimate a noise matrix from clean/noisy pairs drawn under both sampling
// schemes and compare the squared error with its expectation.

use noise_oracle::estimation::{estimate_noise_matrix, squared_error, LabelPairSet, LabelPool, Replacement};
use noise_oracle::noise::{corrupt_labels, uniform_noise, NoiseLevel};
use noise_oracle::seed::derive_stream;
use noise_oracle::theory::{expected_error_fixed, expected_error_variable};
use noise_oracle::ClassPrior;

pub fn run_example() -> noise_oracle::Result<()> {
    // A hand-sized set: class 0 flips to 1 twice out of three.
    let tiny = LabelPairSet::from_tuples(2, &[(0, 0), (0, 1), (0, 1), (1, 1)])?;
    let est = estimate_noise_matrix(&tiny);
    println!("tiny estimate {:?}, empty rows {:?}", est.to_rows(), est.empty_rows());

    // A labelled pool of 5000 instances under uniform noise.
    let k = 3;
    let truth = uniform_noise(k, NoiseLevel::new(0.4)?)?;
    let clean: Vec<usize> = (0..5000).map(|i| i % k).collect();
    let noisy = corrupt_labels(&clean, &truth, &mut derive_stream(1, &[0]))?;
    let pairs: Vec<(usize, usize)> = clean.into_iter().zip(noisy).collect();
    let pool = LabelPool::new(LabelPairSet::from_tuples(k, &pairs)?);

    let fixed = pool.fixed_indices(&[20, 20, 20], Replacement::Without, &mut derive_stream(1, &[1]))?;
    let fixed_est = estimate_noise_matrix(&pool.select(&fixed));
    println!(
        "fixed, 20 per class: SE = {:.4}, expected {:.4}",
        squared_error(&truth, &fixed_est)?,
        expected_error_fixed(&truth, &[20, 20, 20])?.total
    );

    let var = pool.variable_indices(60, Replacement::Without, &mut derive_stream(1, &[2]))?;
    let var_est = estimate_noise_matrix(&pool.select(&var));
    println!(
        "variable, 60 total: SE = {:.4}, expected {:.4}",
        squared_error(&truth, &var_est)?,
        expected_error_variable(&truth, &ClassPrior::uniform(k)?, 60)?.total
    );
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

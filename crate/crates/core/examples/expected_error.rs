// Closed-form expected error: the 1/n law, the single-flip peak and Fixed
// against Variable Sampling on a skewed class distribution.

use noise_oracle::noise::{single_flip_noise, uniform_noise, FlipSpec, NoiseLevel, NoiseSpec};
use noise_oracle::theory::{error_curve, expected_error_fixed, expected_error_variable, Grid};
use noise_oracle::{ClassPrior, SamplingScheme};

pub fn run_example() -> noise_oracle::Result<()> {
    let m = uniform_noise(4, NoiseLevel::new(0.3)?)?;
    for n in [10, 20, 40] {
        println!("uniform eps=0.3, n_i = {n}: E[SE] = {:.5}", expected_error_fixed(&m, &[n; 4])?.total);
    }

    let flips = FlipSpec::new(4, &[(0, 1), (1, 0), (2, 3), (3, 2)])?;
    let noise = NoiseSpec::SingleFlip {
        k: 4,
        epsilon: 0.0,
        flips: flips.flips(),
    };
    let levels: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let curve = error_curve(&noise, &SamplingScheme::fixed_equal(4, 10), None, &Grid::NoiseLevels(levels))?;
    let peak = curve.iter().max_by(|a, b| a.expected_se.total_cmp(&b.expected_se)).expect("non-empty");
    println!("single-flip error peaks at eps = {:.2}", peak.grid_value);
    let _ = single_flip_noise(4, NoiseLevel::new(peak.grid_value)?, &flips)?;

    let skewed = ClassPrior::new(vec![0.91, 0.03, 0.03, 0.03])?;
    let m = uniform_noise(4, NoiseLevel::new(0.2)?)?;
    for n in [100, 400] {
        let fixed = expected_error_fixed(&m, &[n / 4; 4])?;
        let variable = expected_error_variable(&m, &skewed, n)?;
        println!(
            "budget {n}: fixed {:.4}, variable {:.4} (ratio {:.1}), zero-count warnings {}",
            fixed.total,
            variable.total,
            variable.total / fixed.total,
            variable.warnings.len()
        );
    }
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

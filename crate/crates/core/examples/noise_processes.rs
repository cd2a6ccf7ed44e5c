// Build the three synthetic noise processes, push a clean posterior through
// one of them and corrupt a batch of labels.

use noise_oracle::noise::{
    compose_noisy_posterior, corrupt_labels, multi_flip_mnist, single_flip_noise, uniform_noise, FlipSpec,
    NoiseLevel, ProbabilityVector,
};
use noise_oracle::seed::stream;

pub fn run_example() -> noise_oracle::Result<()> {
    let eps = NoiseLevel::new(0.3)?;

    let uniform = uniform_noise(4, eps)?;
    println!("uniform, k = 4, eps = 0.3:");
    for row in uniform.rows() {
        println!("  {row:.3?}");
    }

    let flips = FlipSpec::mnist_pairs();
    let single = single_flip_noise(10, eps, &flips)?;
    println!("single-flip 2 -> 7: M[2][7] = {}", single.row(2)[7]);

    let multi = multi_flip_mnist(eps)?;
    println!("multi-flip row of digit 7: {:.3?}", multi.row(7));

    let clean = ProbabilityVector::new(vec![0.7, 0.1, 0.1, 0.1])?;
    let noisy = compose_noisy_posterior(&clean, &uniform)?;
    println!("clean posterior {:?} -> noisy {:.3?}", clean.as_slice(), noisy.as_slice());

    let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let corrupted = corrupt_labels(&labels, &uniform, &mut stream(7))?;
    let flipped = labels.iter().zip(&corrupted).filter(|(a, b)| a != b).count();
    println!("corrupted {flipped} of {} labels", labels.len());
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

// Train a softmax classifier on a little clean data and a lot of noisy data,
// once through an estimated noise layer and once treating noisy labels as
// clean.

use noise_oracle::training::{noise_handling_trial, BlobsSpec, TrainConfig};

pub fn run_example() -> noise_oracle::Result<()> {
    let spec = BlobsSpec::standard();
    let config = TrainConfig::default();
    for seed in 0..3 {
        let out = noise_handling_trial(&spec, 200, &config, seed)?;
        println!(
            "seed {seed}: with noise layer {:.3}, naive {:.3}, estimate SE {:.4}",
            out.handled_accuracy, out.naive_accuracy, out.estimate_se
        );
    }
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

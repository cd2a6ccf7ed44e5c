// Relate the expected estimation error to downstream accuracy across clean
// budgets, for both sampling schemes.

use noise_oracle::training::{
    correlation_experiment, BlobsSpec, CorrelationSetup, ExperimentSource, SchemeKind,
};

pub fn run_example() -> noise_oracle::Result<()> {
    for scheme in [SchemeKind::Fixed, SchemeKind::Variable] {
        let mut setup = CorrelationSetup::new(
            ExperimentSource::Blobs(BlobsSpec::standard()),
            scheme,
            vec![5, 25, 100],
            11,
        );
        setup.repetitions = 5;
        let table = correlation_experiment(&setup)?;
        println!("{scheme:?}: pearson {:?}", table.pearson);
        for row in &table.rows {
            println!(
                "  n_i {:>3}: E[SE] {:.4}, accuracy {:.3} +- {:.3}",
                row.grid, row.expected_se, row.mean_metric, row.std_metric
            );
        }
    }
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

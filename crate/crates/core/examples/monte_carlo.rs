// Seeded Monte Carlo estimates of the squared error next to the closed form,
// at one setting and along a noise-level sweep.

use noise_oracle::simulation::{run_simulation, sweep, write_sweep_csv, SimulationConfig, SimulationSource};
use noise_oracle::theory::Grid;
use noise_oracle::{ClassPrior, NoiseSpec, SamplingScheme};

pub fn run_example() -> noise_oracle::Result<()> {
    let source = SimulationSource::Synthetic {
        noise: NoiseSpec::MultiFlipMnist { epsilon: 0.4 },
        prior: ClassPrior::uniform(10)?,
    };
    let config = SimulationConfig::new(source, SamplingScheme::Variable { total: 1000 }, 2024).repetitions(200);
    let r = run_simulation(&config)?;
    println!(
        "multi-flip eps=0.4, n=1000: empirical {:.5} +- {:.5}, closed form {:.5}",
        r.mean_se,
        r.std_se,
        r.theory_se.unwrap_or(f64::NAN)
    );

    let template = SimulationConfig::new(
        SimulationSource::Synthetic {
            noise: NoiseSpec::Uniform { k: 5, epsilon: 0.0 },
            prior: ClassPrior::uniform(5)?,
        },
        SamplingScheme::fixed_equal(5, 30),
        2024,
    )
    .repetitions(200);
    let rows = sweep(&template, &Grid::NoiseLevels(vec![0.1, 0.3, 0.5, 0.7]))?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

// Describe a sweep as a manifest, run it, and rerun it from the saved file.

use noise_oracle::cli::{execute, Command, ExperimentManifest, GridArgs, NoiseArgs, NoiseKind, SchemeArgs, SweepArgs};

pub fn run_example() -> noise_oracle::Result<()> {
    let dir = std::env::temp_dir().join(format!("noise-oracle-manifest-{}", std::process::id()));
    let mut sweep = SweepArgs {
        grid: GridArgs {
            sizes: vec![10, 40],
            ..Default::default()
        },
        ..Default::default()
    };
    sweep.sim.noise = NoiseArgs {
        kind: Some(NoiseKind::Uniform),
        k: Some(3),
        epsilon: Some(0.3),
        ..Default::default()
    };
    sweep.sim.scheme = SchemeArgs::default();
    sweep.sim.repetitions = 100;
    let manifest = ExperimentManifest {
        seed: Some(5),
        out_dir: dir.join("first"),
        command: Command::Sweep(sweep),
    };
    execute(&manifest)?;

    let saved = ExperimentManifest::load(&dir.join("first/manifest.json"))?;
    let rerun = ExperimentManifest {
        out_dir: dir.join("second"),
        ..saved
    };
    execute(&rerun)?;

    let read = |p: &str| std::fs::read_to_string(dir.join(p)).unwrap_or_default();
    print!("{}", read("first/sweep.csv"));
    println!("rerun identical: {}", read("first/sweep.csv") == read("second/sweep.csv"));
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

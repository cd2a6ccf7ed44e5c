//! Seeded Monte Carlo harness: sample, estimate, score, repeat, aggregate.
//!
//! Repetition `r` draws from its own stream `derive_seed(master_seed, [r])`
//! and results are reduced in repetition order, so the output does not depend
//! on how many rayon workers run the repetitions.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    count_matrix, estimate_from_counts, estimate_noise_matrix, squared_error, LabelPool,
    Replacement, SamplingScheme, TransitionCounts,
};
use crate::noise::{ClassPrior, NoiseMatrix, NoiseSpec, RowSampler};
use crate::seed::{derive_seed, derive_stream};
use crate::sum::KahanSum;
use crate::theory::{expected_error, fmt_f64, Grid};

pub const DEFAULT_REPETITIONS: usize = 500;

/// Where clean/noisy pairs come from.
#[derive(Debug, Clone)]
pub enum SimulationSource {
    /// Clean labels from `prior` (Variable) or the requested counts (Fixed),
    /// noisy labels drawn through the known process.
    Synthetic { noise: NoiseSpec, prior: ClassPrior },
    /// Resampling a finite pool; the whole-pool estimate stands in for the
    /// unknown true matrix.
    Corpus { pool: Arc<LabelPool> },
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub repetitions: usize,
    pub scheme: SamplingScheme,
    pub source: SimulationSource,
    pub master_seed: u64,
    /// Only used for corpus sources; synthetic populations are infinite.
    pub replacement: Replacement,
    pub keep_per_repetition: bool,
}

impl SimulationConfig {
    pub fn new(source: SimulationSource, scheme: SamplingScheme, master_seed: u64) -> Self {
        Self {
            repetitions: DEFAULT_REPETITIONS,
            scheme,
            source,
            master_seed,
            replacement: Replacement::With,
            keep_per_repetition: false,
        }
    }

    pub fn repetitions(mut self, r: usize) -> Self {
        self.repetitions = r;
        self
    }

    pub fn keep_per_repetition(mut self, keep: bool) -> Self {
        self.keep_per_repetition = keep;
        self
    }

    pub fn replacement(mut self, r: Replacement) -> Self {
        self.replacement = r;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub mean_se: f64,
    /// Spread of the squared error across repetitions (population form).
    pub std_se: f64,
    pub per_repetition_se: Option<Vec<f64>>,
    /// Closed-form expectation, when defined for the scheme.
    pub theory_se: Option<f64>,
    /// Fraction of repetitions where some class was never drawn.
    pub empty_row_rate: f64,
    /// Ground truth was estimated from the whole corpus.
    pub approximate_truth: bool,
}

struct Truth {
    matrix: NoiseMatrix,
    prior: ClassPrior,
    approximate: bool,
}

fn truth(source: &SimulationSource) -> Result<Truth> {
    match source {
        SimulationSource::Synthetic { noise, prior } => {
            let matrix = noise.build()?;
            if prior.k() != matrix.k() {
                return Err(Error::DimensionMismatch {
                    expected: matrix.k(),
                    actual: prior.k(),
                });
            }
            Ok(Truth {
                matrix,
                prior: prior.clone(),
                approximate: false,
            })
        }
        SimulationSource::Corpus { pool } => {
            let counts = count_matrix(&pool.to_pair_set());
            if let Some(i) = counts.per_class.iter().position(|&n| n == 0) {
                return Err(Error::AbsentClass(i.to_string()));
            }
            let matrix = NoiseMatrix::from_rows(estimate_from_counts(&counts).to_rows())?;
            Ok(Truth {
                matrix,
                prior: ClassPrior::from_counts(&counts.per_class)?,
                approximate: true,
            })
        }
    }
}

fn categorical<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let last = cumulative.len() - 1;
    cumulative[..last].iter().position(|&c| u < c).unwrap_or(last)
}

fn synthetic_counts<R: Rng + ?Sized>(
    sampler: &RowSampler,
    prior_cdf: &[f64],
    k: usize,
    scheme: &SamplingScheme,
    rng: &mut R,
) -> TransitionCounts {
    let mut transitions = vec![0u64; k * k];
    let mut per_class = vec![0u64; k];
    let mut record = |clean: usize, rng: &mut R| {
        let noisy = sampler.sample(clean, rng);
        transitions[clean * k + noisy] += 1;
        per_class[clean] += 1;
    };
    match scheme {
        SamplingScheme::Fixed { per_class: want } => {
            for (clean, &n) in want.iter().enumerate() {
                for _ in 0..n {
                    record(clean, rng);
                }
            }
        }
        SamplingScheme::Variable { total } => {
            for _ in 0..*total {
                let clean = categorical(prior_cdf, rng);
                record(clean, rng);
            }
        }
    }
    TransitionCounts {
        k,
        transitions,
        per_class,
    }
}

/// Runs every repetition of `config` and aggregates the squared errors.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationResult> {
    if config.repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let truth = truth(&config.source)?;
    let k = truth.matrix.k();
    if let SamplingScheme::Fixed { per_class } = &config.scheme {
        if per_class.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: per_class.len(),
            });
        }
    }
    let sampler = RowSampler::new(&truth.matrix);
    let prior_cdf: Vec<f64> = truth
        .prior
        .probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let one = |r: usize| -> Result<(f64, bool)> {
        let mut rng = derive_stream(config.master_seed, &[r as u64]);
        let estimate = match &config.source {
            SimulationSource::Synthetic { .. } => {
                estimate_from_counts(&synthetic_counts(&sampler, &prior_cdf, k, &config.scheme, &mut rng))
            }
            SimulationSource::Corpus { pool } => {
                let idx = pool.indices(&config.scheme, config.replacement, &mut rng)?;
                estimate_noise_matrix(&pool.select(&idx))
            }
        };
        Ok((squared_error(&truth.matrix, &estimate)?, estimate.has_empty_rows()))
    };
    let outcomes: Vec<(f64, bool)> = (0..config.repetitions)
        .into_par_iter()
        .map(one)
        .collect::<Result<_>>()?;

    let n = outcomes.len() as f64;
    let mean = outcomes.iter().map(|o| o.0).collect::<KahanSum>().value() / n;
    let var = outcomes
        .iter()
        .map(|o| (o.0 - mean) * (o.0 - mean))
        .collect::<KahanSum>()
        .value()
        / n;
    let empty = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    let theory_se = expected_error(&truth.matrix, &config.scheme, Some(&truth.prior))
        .ok()
        .map(|r| r.total);

    Ok(SimulationResult {
        mean_se: mean,
        std_se: var.sqrt(),
        per_repetition_se: config
            .keep_per_repetition
            .then(|| outcomes.iter().map(|o| o.0).collect()),
        theory_se,
        empty_row_rate: empty,
        approximate_truth: truth.approximate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_value: f64,
    pub result: SimulationResult,
}

/// One simulation per grid point, each with its own child master seed.
pub fn sweep(template: &SimulationConfig, grid: &Grid) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    (0..grid.len())
        .map(|idx| {
            let mut config = template.clone();
            config.master_seed = derive_seed(template.master_seed, &[idx as u64]);
            match (&template.source, grid) {
                (SimulationSource::Synthetic { noise, prior }, _) => {
                    let (noise, scheme) = grid.point(idx, noise, &template.scheme)?;
                    config.source = SimulationSource::Synthetic {
                        noise,
                        prior: prior.clone(),
                    };
                    config.scheme = scheme;
                }
                (SimulationSource::Corpus { .. }, Grid::SampleSizes(sizes)) => {
                    config.scheme = template.scheme.with_size(sizes[idx]);
                }
                (SimulationSource::Corpus { .. }, Grid::NoiseLevels(_)) => {
                    return Err(Error::invalid("a corpus has a fixed noise level; sweep sample sizes instead"))
                }
            }
            Ok(SweepRow {
                grid_value: grid.value(idx),
                result: run_simulation(&config)?,
            })
        })
        .collect()
}

/// `grid_value,theory_se,empirical_mean_se,empirical_std_se,empty_row_rate`.
/// An undefined closed form is written as an empty field.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "grid_value",
        "theory_se",
        "empirical_mean_se",
        "empirical_std_se",
        "empty_row_rate",
    ])?;
    for row in rows {
        let r = &row.result;
        w.write_record([
            fmt_f64(row.grid_value),
            r.theory_se.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.mean_se),
            fmt_f64(r.std_se),
            fmt_f64(r.empty_row_rate),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::LabelPairSet;

    fn uniform_source(k: usize, eps: f64) -> SimulationSource {
        SimulationSource::Synthetic {
            noise: NoiseSpec::Uniform { k, epsilon: eps },
            prior: ClassPrior::uniform(k).unwrap(),
        }
    }

    #[test]
    fn identity_truth_has_zero_error() {
        let cfg = SimulationConfig::new(uniform_source(4, 0.0), SamplingScheme::fixed_equal(4, 5), 1).repetitions(50);
        let r = run_simulation(&cfg).unwrap();
        assert_eq!((r.mean_se, r.std_se), (0.0, 0.0));
        assert_eq!(r.theory_se, Some(0.0));
    }

    #[test]
    fn uniform_fixed_matches_closed_form() {
        let cfg = SimulationConfig::new(uniform_source(10, 0.5), SamplingScheme::fixed_equal(10, 10), 11);
        let r = run_simulation(&cfg).unwrap();
        let theory = 13.0 / 18.0;
        assert!(((r.mean_se - theory) / theory).abs() < 0.05, "{}", r.mean_se);
        assert_eq!(r.empty_row_rate, 0.0);
    }

    #[test]
    fn single_repetition_has_zero_spread() {
        let cfg = SimulationConfig::new(uniform_source(3, 0.3), SamplingScheme::fixed_equal(3, 4), 2)
            .repetitions(1)
            .keep_per_repetition(true);
        let r = run_simulation(&cfg).unwrap();
        assert_eq!(r.std_se, 0.0);
        assert_eq!(r.per_repetition_se.unwrap().len(), 1);
        assert!(run_simulation(&cfg.clone().repetitions(0)).is_err());
    }

    #[test]
    fn variable_sampling_reports_empty_rows() {
        let cfg = SimulationConfig::new(uniform_source(10, 0.3), SamplingScheme::Variable { total: 10 }, 3)
            .repetitions(100);
        let r = run_simulation(&cfg).unwrap();
        assert!(r.empty_row_rate > 0.9);
    }

    #[test]
    fn corpus_source_uses_whole_pool_truth() {
        let pairs: Vec<(usize, usize)> = (0..200).map(|i| (i % 2, usize::from(i % 7 == 0))).collect();
        let pool = Arc::new(LabelPool::new(LabelPairSet::from_tuples(2, &pairs).unwrap()));
        let cfg = SimulationConfig::new(SimulationSource::Corpus { pool }, SamplingScheme::fixed_equal(2, 20), 4)
            .repetitions(100)
            .replacement(Replacement::Without);
        let r = run_simulation(&cfg).unwrap();
        assert!(r.approximate_truth);
        assert!(r.mean_se > 0.0);
        let too_many = SimulationConfig {
            scheme: SamplingScheme::fixed_equal(2, 101),
            ..cfg
        };
        assert!(matches!(run_simulation(&too_many), Err(Error::InsufficientInstances { .. })));
    }

    #[test]
    fn same_seed_same_repetitions() {
        let cfg = SimulationConfig::new(uniform_source(5, 0.4), SamplingScheme::Variable { total: 60 }, 77)
            .repetitions(64)
            .keep_per_repetition(true);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_simulation(&cfg).unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn sweep_noise_levels_from_zero() {
        let cfg = SimulationConfig::new(uniform_source(4, 0.0), SamplingScheme::fixed_equal(4, 10), 5).repetitions(50);
        let rows = sweep(&cfg, &Grid::NoiseLevels(vec![0.0, 0.3])).unwrap();
        assert_eq!(rows[0].result.mean_se, 0.0);
        assert!(rows[1].result.mean_se > 0.0);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("grid_value,theory_se,empirical_mean_se,empirical_std_se,empty_row_rate\n0.0,0.0,0.0,0.0,0.0\n"));
    }
}

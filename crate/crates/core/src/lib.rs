//! Noise transition matrices for learning with noisy labels.
//!
//! - [`noise`]: the noise-process model and synthetic generators.
//! - [`estimation`]: sampling clean/noisy pairs and the count-ratio estimate.
//! - [`theory`]: closed-form expected squared error of that estimate.
//! - [`simulation`]: seeded Monte Carlo runs checked against the closed form.
//! - [`data`]: parallel corpora, whole-corpus statistics, label-quality metrics.
//! - [`training`]: a softmax base model with a frozen noise-adaptation layer.
//! - [`cli`]: manifest-driven command line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimation;
pub mod noise;
pub mod seed;
pub mod simulation;
pub mod sum;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use estimation::{
    count_matrix, estimate_noise_matrix, fixed_sample, squared_error, variable_sample, Estimate,
    LabelPair, LabelPairSet, LabelPool, Replacement, SamplingScheme,
};
pub use noise::{
    compose_noisy_posterior, corrupt_labels, multi_flip_mnist, single_flip_noise, uniform_noise,
    validate, ClassPrior, FlipSpec, NoiseLevel, NoiseMatrix, NoiseSpec, ProbabilityVector,
    SquareMatrix,
};
pub use simulation::{run_simulation, sweep, SimulationConfig, SimulationResult, SimulationSource};
pub use theory::{
    binomial_pmf, error_curve, expected_error_fixed, expected_error_variable,
    truncated_reciprocal_expectation, ExpectedErrorReport, Grid,
};

//! Estimation error versus downstream test performance.
//!
//! For every grid point (a per-class clean budget `n_i`) and repetition: draw
//! the clean sample, estimate the noise matrix from it, train with the
//! estimate as noise layer and score on the test set. Mean scores are paired
//! with the closed-form expected estimation error of the grid point.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, BlobsSpec, LabeledSet, LinearSoftmaxModel, PairedSet, TrainConfig};
use crate::error::{Error, Result};
use crate::estimation::{count_matrix, estimate_from_counts, estimate_noise_matrix, Replacement, SamplingScheme};
use crate::noise::{ClassPrior, NoiseMatrix};
use crate::seed::{derive_seed, derive_stream};
use crate::sum::KahanSum;
use crate::theory::{expected_error_fixed, expected_error_variable, fmt_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// `n_i` instances of every class.
    Fixed,
    /// `k · n_i` instances from the whole pool: the same total budget.
    Variable,
}

impl SchemeKind {
    pub fn scheme(self, k: usize, per_class: usize) -> SamplingScheme {
        match self {
            SchemeKind::Fixed => SamplingScheme::fixed_equal(k, per_class),
            SchemeKind::Variable => SamplingScheme::Variable { total: k * per_class },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Metric {
    Accuracy,
    MicroF1 { non_entity: usize },
}

#[derive(Debug, Clone)]
pub enum ExperimentSource {
    /// Fresh realization per repetition, shared across grid points.
    Blobs(BlobsSpec),
    /// Fixed data; the whole-pool matrix is the reference.
    Corpus { pool: PairedSet, test: LabeledSet },
}

#[derive(Debug, Clone)]
pub struct CorrelationSetup {
    pub source: ExperimentSource,
    pub scheme: SchemeKind,
    /// Per-class clean budgets.
    pub grid: Vec<usize>,
    pub repetitions: usize,
    pub train: TrainConfig,
    /// Train the base model on a fixed per-class clean budget, drawn
    /// independently of the estimation sample.
    pub fix_base_clean: Option<usize>,
    pub metric: Metric,
    pub master_seed: u64,
    pub replacement: Replacement,
}

impl CorrelationSetup {
    pub fn new(source: ExperimentSource, scheme: SchemeKind, grid: Vec<usize>, master_seed: u64) -> Self {
        Self {
            source,
            scheme,
            grid,
            repetitions: 20,
            train: TrainConfig::default(),
            fix_base_clean: None,
            metric: Metric::Accuracy,
            master_seed,
            replacement: Replacement::Without,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub grid: usize,
    pub expected_se: f64,
    pub mean_metric: f64,
    pub std_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
    /// Pearson correlation of expected error and mean metric across grid
    /// points; absent when either column is constant.
    pub pearson: Option<f64>,
}

/// Sample Pearson correlation, `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
    for (x, y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
    }
    let den = (sxx.value() * syy.value()).sqrt();
    (den > 0.0).then(|| sxy.value() / den)
}

struct Reference {
    truth: NoiseMatrix,
    prior: ClassPrior,
    k: usize,
    d: usize,
}

fn reference(source: &ExperimentSource) -> Result<Reference> {
    match source {
        ExperimentSource::Blobs(spec) => Ok(Reference {
            truth: spec.truth()?,
            prior: spec.prior.clone(),
            k: spec.k(),
            d: spec.d(),
        }),
        ExperimentSource::Corpus { pool, .. } => {
            let counts = count_matrix(&pool.pair_set());
            if let Some(i) = counts.per_class.iter().position(|&n| n == 0) {
                return Err(Error::AbsentClass(i.to_string()));
            }
            Ok(Reference {
                truth: NoiseMatrix::from_rows(estimate_from_counts(&counts).to_rows())?,
                prior: ClassPrior::from_counts(&counts.per_class)?,
                k: pool.k(),
                d: pool.clean_view().d(),
            })
        }
    }
}

fn one_run(setup: &CorrelationSetup, reference: &Reference, g: usize, r: usize) -> Result<f64> {
    let master = setup.master_seed;
    let owned;
    let (pool, test) = match &setup.source {
        ExperimentSource::Blobs(spec) => {
            owned = spec.generate(derive_seed(master, &[0, r as u64]))?;
            (&owned.pool, &owned.test)
        }
        ExperimentSource::Corpus { pool, test } => (pool, test),
    };
    let labels = pool.label_pool();
    let scheme = setup.scheme.scheme(reference.k, setup.grid[g]);
    let idx = labels.indices(&scheme, setup.replacement, &mut derive_stream(master, &[1, g as u64, r as u64]))?;
    let (matrix, _) = estimate_noise_matrix(&labels.select(&idx)).to_training_matrix()?;

    let base_idx = match setup.fix_base_clean {
        Some(c) => labels.fixed_indices(&vec![c; reference.k], setup.replacement, &mut derive_stream(master, &[3, r as u64]))?,
        None => idx,
    };
    if base_idx.is_empty() {
        return Err(Error::invalid("grid point yields an empty clean training set"));
    }
    let clean = pool.clean_view().subset(&base_idx);
    let cfg = TrainConfig {
        seed: derive_seed(master, &[2, r as u64]),
        ..setup.train.clone()
    };
    let out = train(
        LinearSoftmaxModel::zeros(reference.k, reference.d),
        &clean,
        &pool.noisy_view(),
        Some(&matrix),
        None,
        &cfg,
    )?;
    let eval = match setup.metric {
        Metric::Accuracy => evaluate(&out.model, test, None)?.accuracy,
        Metric::MicroF1 { non_entity } => evaluate(&out.model, test, Some(non_entity))?.micro_f1_excl,
    };
    Ok(eval)
}

pub fn correlation_experiment(setup: &CorrelationSetup) -> Result<CorrelationTable> {
    if setup.grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    if setup.repetitions < 2 {
        return Err(Error::invalid("need at least two repetitions"));
    }
    let reference = reference(&setup.source)?;
    let reps = setup.repetitions;
    let scores: Vec<f64> = (0..setup.grid.len() * reps)
        .into_par_iter()
        .map(|job| one_run(setup, &reference, job / reps, job % reps))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(setup.grid.len());
    for (g, &n_i) in setup.grid.iter().enumerate() {
        let s = &scores[g * reps..(g + 1) * reps];
        let mean = s.iter().copied().collect::<KahanSum>().value() / reps as f64;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).collect::<KahanSum>().value() / reps as f64;
        let expected_se = match setup.scheme {
            SchemeKind::Fixed => expected_error_fixed(&reference.truth, &vec![n_i; reference.k])?.total,
            SchemeKind::Variable => {
                expected_error_variable(&reference.truth, &reference.prior, reference.k * n_i)?.total
            }
        };
        rows.push(CorrelationRow {
            grid: n_i,
            expected_se,
            mean_metric: mean,
            std_metric: var.sqrt(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.expected_se).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_metric).collect();
    Ok(CorrelationTable {
        pearson: pearson(&xs, &ys),
        rows,
    })
}

/// `grid,expected_se,mean_metric,std_metric`.
pub fn write_correlation_csv<W: Write>(table: &CorrelationTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grid", "expected_se", "mean_metric", "std_metric"])?;
    for r in &table.rows {
        w.write_record([
            r.grid.to_string(),
            fmt_f64(r.expected_se),
            fmt_f64(r.mean_metric),
            fmt_f64(r.std_metric),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

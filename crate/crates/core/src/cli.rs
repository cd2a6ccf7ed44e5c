//! Command line front end.
//!
//! Flags compile into an [`ExperimentManifest`]; the manifest alone decides
//! the outputs and is written as `manifest.json` next to them, so a saved
//! manifest reruns the experiment with `--manifest path`. The worker thread
//! count is not part of the manifest because it never changes the results.
//!
//! Exit codes: 0 on success, 1 on an internal failure, 2 on a usage or input
//! error.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{quality_report, ParallelCorpus, TsvSchema};
use crate::error::{Error, Result};
use crate::estimation::{estimate_noise_matrix, LabelPairSet, LabelPool, Replacement, SamplingScheme};
use crate::noise::{corrupt_labels, ClassPrior, FlipSpec, NoiseMatrix, NoiseSpec};
use crate::seed::{derive_seed, derive_stream};
use crate::simulation::{run_simulation, sweep, write_sweep_csv, SimulationConfig, SimulationSource, DEFAULT_REPETITIONS};
use crate::theory::{error_curve, expected_error, fmt_f64, write_curve_csv, Grid};
use crate::training::{
    correlation_experiment, evaluate, train, write_correlation_csv, BlobsSpec, CorrelationSetup, ExperimentSource,
    LabeledSet, LinearSoftmaxModel, Metric, PairedSet, SchemeKind, TrainConfig,
};

pub const THREADS_ENV: &str = "NOISE_ORACLE_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "noise-oracle", version, about = "Noise transition matrix estimation and its expected error")]
pub struct Cli {
    /// Master seed; required by every stochastic command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving the outputs and the manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for repetitions; defaults to all cores.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Run a saved manifest instead of a subcommand. `--seed` and
    /// `--out-dir` override the values it contains.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub command: Command,
}

impl ExperimentManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::invalid(format!("`{}` is stochastic and needs a seed (--seed)", self.command.name()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Build a noise matrix and write it as JSON.
    GenNoise(GenNoiseArgs),
    /// Pass clean labels through a noise process.
    Corrupt(CorruptArgs),
    /// Estimate the noise matrix from clean/noisy pairs.
    Estimate(EstimateArgs),
    /// Closed-form expected squared error, at one point or along a grid.
    ExpectedError(ExpectedErrorArgs),
    /// Monte Carlo squared error of the estimate at one setting.
    Simulate(SimulateArgs),
    /// Monte Carlo squared error along a grid, next to the closed form.
    Sweep(SweepArgs),
    /// Precision, recall and F1 of a noisy label set against the clean one.
    Quality(QualityArgs),
    /// Train the base model with a noise layer on the noisy data.
    Train(TrainArgs),
    /// Score a trained model on test data.
    Eval(EvalArgs),
    /// Expected estimation error against downstream test performance.
    Correlate(CorrelateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenNoise(_) => "gen-noise",
            Command::Corrupt(_) => "corrupt",
            Command::Estimate(_) => "estimate",
            Command::ExpectedError(_) => "expected-error",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Quality(_) => "quality",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Correlate(_) => "correlate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Uniform,
    SingleFlip,
    MultiFlipMnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipPreset {
    /// 2→7, 3→8, 5→6, 6→5, 7→1 on ten classes.
    MnistPairs,
    /// i → i+1 mod k.
    Cyclic,
}

/// A noise process, either generated or read from a matrix file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseArgs {
    #[arg(long, value_enum)]
    pub kind: Option<NoiseKind>,
    /// Number of classes (ten for multi-flip-mnist).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Single-flip pairs as `source:target`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_flip)]
    pub flips: Vec<(usize, usize)>,
    #[arg(long, value_enum, conflicts_with = "flips")]
    pub flip_preset: Option<FlipPreset>,
    /// Noise matrix JSON file, instead of `--kind`.
    #[arg(long, conflicts_with = "kind")]
    pub matrix: Option<PathBuf>,
}

fn parse_flip(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected source:target, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl NoiseArgs {
    /// A noise-level grid supplies `ε`, so the flag may be omitted.
    fn spec_for_grid(&self, grid: Option<&Grid>) -> Result<NoiseSpec> {
        match grid {
            Some(Grid::NoiseLevels(v)) if self.epsilon.is_none() && self.matrix.is_none() => Self {
                epsilon: Some(v.first().copied().unwrap_or(0.0)),
                ..self.clone()
            }
            .to_spec(),
            _ => self.to_spec(),
        }
    }

    fn is_set(&self) -> bool {
        self.kind.is_some() || self.matrix.is_some()
    }

    pub fn to_spec(&self) -> Result<NoiseSpec> {
        if let Some(path) = &self.matrix {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Ok(NoiseSpec::Explicit {
                matrix: NoiseMatrix::from_json(&text)?,
            });
        }
        let kind = self.kind.ok_or_else(|| Error::invalid("no noise process given (--kind or --matrix)"))?;
        let epsilon = self.epsilon.ok_or_else(|| Error::invalid("--epsilon is required"))?;
        let need_k = || self.k.ok_or_else(|| Error::invalid("--k is required"));
        Ok(match kind {
            NoiseKind::Uniform => NoiseSpec::Uniform { k: need_k()?, epsilon },
            NoiseKind::SingleFlip => {
                let k = need_k()?;
                let flips = match self.flip_preset {
                    Some(FlipPreset::MnistPairs) => {
                        if k != 10 {
                            return Err(Error::invalid("the mnist-pairs preset needs k = 10"));
                        }
                        FlipSpec::mnist_pairs().flips()
                    }
                    Some(FlipPreset::Cyclic) => FlipSpec::cyclic(k)?.flips(),
                    None if self.flips.is_empty() => {
                        return Err(Error::invalid("single-flip noise needs --flips or --flip-preset"))
                    }
                    None => self.flips.clone(),
                };
                NoiseSpec::SingleFlip { k, epsilon, flips }
            }
            NoiseKind::MultiFlipMnist => {
                if self.k.is_some_and(|k| k != 10) {
                    return Err(Error::invalid("multi-flip-mnist noise has k = 10"));
                }
                NoiseSpec::MultiFlipMnist { epsilon }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    #[default]
    Fixed,
    Variable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementArg {
    #[default]
    With,
    Without,
}

impl From<ReplacementArg> for Replacement {
    fn from(r: ReplacementArg) -> Self {
        match r {
            ReplacementArg::With => Replacement::With,
            ReplacementArg::Without => Replacement::Without,
        }
    }
}

/// How the clean/noisy pair sample is drawn.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeArgs {
    #[arg(long, value_enum, default_value_t)]
    pub scheme: SchemeArg,
    /// Fixed Sampling: instances per class, one value for all classes or one per class.
    #[arg(long, value_delimiter = ',')]
    pub per_class: Vec<usize>,
    /// Variable Sampling: total number of instances.
    #[arg(long)]
    pub n: Option<usize>,
    /// Clean-label distribution for synthetic Variable Sampling; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    pub prior: Vec<f64>,
}

impl SchemeArgs {
    pub fn to_scheme(&self, k: usize) -> Result<SamplingScheme> {
        match self.scheme {
            SchemeArg::Fixed => match self.per_class.as_slice() {
                [] => match self.n {
                    Some(n) => Ok(SamplingScheme::fixed_equal(k, n)),
                    None => Err(Error::invalid("fixed sampling needs --per-class")),
                },
                [n] => Ok(SamplingScheme::fixed_equal(k, *n)),
                v if v.len() == k => Ok(SamplingScheme::Fixed { per_class: v.to_vec() }),
                v => Err(Error::DimensionMismatch {
                    expected: k,
                    actual: v.len(),
                }),
            },
            SchemeArg::Variable => match self.n {
                Some(total) => Ok(SamplingScheme::Variable { total }),
                None => Err(Error::invalid("variable sampling needs --n")),
            },
        }
    }

    pub fn to_prior(&self, k: usize) -> Result<ClassPrior> {
        if self.prior.is_empty() {
            ClassPrior::uniform(k)
        } else if self.prior.len() != k {
            Err(Error::DimensionMismatch {
                expected: k,
                actual: self.prior.len(),
            })
        } else {
            ClassPrior::new(self.prior.clone())
        }
    }
}

/// Grid axis; at most one of the two may be given.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GridArgs {
    /// Sample sizes: `n_i` under Fixed Sampling, `n` under Variable Sampling.
    #[arg(long, value_delimiter = ',', conflicts_with = "epsilons")]
    pub sizes: Vec<usize>,
    /// Noise levels.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<f64>,
}

impl GridArgs {
    fn to_grid(&self) -> Result<Option<Grid>> {
        match (self.sizes.is_empty(), self.epsilons.is_empty()) {
            (true, true) => Ok(None),
            (false, true) => Ok(Some(Grid::SampleSizes(self.sizes.clone()))),
            (true, false) => Ok(Some(Grid::NoiseLevels(self.epsilons.clone()))),
            (false, false) => Err(Error::invalid("give either --sizes or --epsilons, not both")),
        }
    }
}

/// A parallel corpus file and how to read it.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusArgs {
    /// TSV with token, clean tag, noisy tags and optional feature columns.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Names of the noisy label columns. Without it every column after the
    /// clean tag is a label set and there are no features.
    #[arg(long, value_delimiter = ',')]
    pub label_sets: Vec<String>,
    /// Label set to use; the first one when absent.
    #[arg(long)]
    pub label_set: Option<String>,
    /// Closed tag inventory in index order.
    #[arg(long, value_delimiter = ',')]
    pub inventory: Vec<String>,
}

impl CorpusArgs {
    fn schema(&self, inventory: Option<&[String]>) -> TsvSchema {
        TsvSchema {
            label_sets: (!self.label_sets.is_empty()).then(|| self.label_sets.clone()),
            inventory: if self.inventory.is_empty() {
                inventory.map(<[String]>::to_vec)
            } else {
                Some(self.inventory.clone())
            },
        }
    }

    fn load(&self, path: &Path, inventory: Option<&[String]>) -> Result<ParallelCorpus> {
        ParallelCorpus::load_tsv(path, &self.schema(inventory))
    }

    fn load_main(&self) -> Result<Option<(ParallelCorpus, usize)>> {
        let Some(path) = &self.corpus else {
            return Ok(None);
        };
        let corpus = self.load(path, None)?;
        let set = match &self.label_set {
            Some(name) => corpus.label_set_index(name)?,
            None if corpus.label_set_names().is_empty() => {
                return Err(Error::invalid("the corpus has no noisy label set"))
            }
            None => 0,
        };
        Ok(Some((corpus, set)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenNoiseArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptArgs {
    /// Clean labels, one class index per line.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateArgs {
    /// `clean<TAB>noisy` per line; an optional header line is skipped.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Column separator, tab by default.
    #[arg(long, default_value_t = '\t')]
    pub delimiter: char,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpectedErrorArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// Synthetic pairs from a noise process; alternative to `--corpus`.
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    pub repetitions: usize,
    /// Resampling mode for corpus sources.
    #[arg(long, value_enum, default_value_t)]
    pub replacement: ReplacementArg,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            noise: NoiseArgs::default(),
            corpus: CorpusArgs::default(),
            scheme: SchemeArgs::default(),
            repetitions: DEFAULT_REPETITIONS,
            replacement: ReplacementArg::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimulateArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Background tag left out of the micro averages.
    #[arg(long, default_value = "O")]
    pub non_entity: String,
}

impl Default for QualityArgs {
    fn default() -> Self {
        Self {
            corpus: CorpusArgs::default(),
            non_entity: "O".into(),
        }
    }
}

/// Training data: the blobs benchmark or a corpus with feature columns.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceArgs {
    /// Use the standard Gaussian-blobs benchmark.
    #[arg(long, conflicts_with = "corpus")]
    pub blobs: bool,
    /// Blobs benchmark definition as JSON; implies `--blobs`.
    #[arg(long, conflicts_with = "corpus")]
    pub blobs_spec: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

enum Source {
    Blobs(BlobsSpec),
    Corpus { pool: PairedSet, labels: Vec<String> },
}

impl SourceArgs {
    fn load(&self) -> Result<Source> {
        if let Some(path) = &self.blobs_spec {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Ok(Source::Blobs(serde_json::from_str(&text)?));
        }
        if self.blobs {
            return Ok(Source::Blobs(BlobsSpec::standard()));
        }
        match self.corpus.load_main()? {
            Some((corpus, set)) => {
                if corpus.feature_dim() == 0 {
                    return Err(Error::invalid("training needs feature columns in the corpus"));
                }
                Ok(Source::Corpus {
                    pool: PairedSet::from_corpus(&corpus, set)?,
                    labels: corpus.label_names().to_vec(),
                })
            }
            None => Err(Error::invalid("no training data (--blobs, --blobs-spec or --corpus)")),
        }
    }

    fn load_test(&self, path: &Path, labels: &[String]) -> Result<LabeledSet> {
        let corpus = self.corpus.load(path, Some(labels))?;
        Ok(PairedSet::from_corpus(&corpus, 0)?.clean_view().clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerArg {
    /// Estimated from the clean sample.
    #[default]
    Estimated,
    /// The known process (blobs) or the whole-pool estimate (corpus).
    Reference,
    /// Noisy labels treated as clean.
    None,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Noisy instances per epoch as a multiple of the clean set size.
    #[arg(long, default_value_t = TrainConfig::default().noisy_multiplier)]
    pub noisy_multiplier: f64,
    #[arg(long, default_value_t = TrainConfig::default().log_epsilon)]
    pub log_epsilon: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            noisy_multiplier: c.noisy_multiplier,
            log_epsilon: c.log_epsilon,
        }
    }
}

impl TrainParams {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            noisy_multiplier: self.noisy_multiplier,
            log_epsilon: self.log_epsilon,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Clean sample drawn without replacement from the pool; it both
    /// estimates the noise layer and trains the base model.
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long, value_enum, default_value_t)]
    pub noise_layer: LayerArg,
    /// Development corpus for epoch selection.
    #[arg(long)]
    pub dev_corpus: Option<PathBuf>,
    #[command(flatten)]
    pub params: TrainParams,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Blobs test set of the realization drawn for `--seed`.
    #[command(flatten)]
    pub source: SourceArgs,
    /// Test corpus; read with `--inventory`, else with tags in order of appearance.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// Background tag for micro F1.
    #[arg(long)]
    pub non_entity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Test corpus for corpus sources.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub scheme: SchemeArg,
    /// Per-class clean budgets; Variable Sampling draws `k` times as many in total.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    /// Train the base model on this many clean instances per class, drawn
    /// independently of the estimation sample.
    #[arg(long)]
    pub fix_base_clean: Option<usize>,
    /// Score with micro F1 excluding this tag instead of accuracy.
    #[arg(long)]
    pub non_entity: Option<String>,
    #[command(flatten)]
    pub params: TrainParams,
}

impl Default for CorrelateArgs {
    fn default() -> Self {
        Self {
            source: SourceArgs::default(),
            test_corpus: None,
            scheme: SchemeArg::default(),
            sizes: Vec::new(),
            repetitions: 20,
            fix_base_clean: None,
            non_entity: None,
            params: TrainParams::default(),
        }
    }
}

/// Writes `name` into the output directory.
struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Runs a manifest on the current rayon pool and writes its outputs.
pub fn execute(manifest: &ExperimentManifest) -> Result<()> {
    let dir = &manifest.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Output { dir };
    match &manifest.command {
        Command::GenNoise(a) => gen_noise(a, &out)?,
        Command::Corrupt(a) => corrupt(a, manifest.require_seed()?, &out)?,
        Command::Estimate(a) => estimate(a, &out)?,
        Command::ExpectedError(a) => expected_error_cmd(a, &out)?,
        Command::Simulate(a) => simulate(a, manifest.require_seed()?, &out)?,
        Command::Sweep(a) => sweep_cmd(a, manifest.require_seed()?, &out)?,
        Command::Quality(a) => quality(a, &out)?,
        Command::Train(a) => train_cmd(a, manifest.require_seed()?, &out)?,
        Command::Eval(a) => eval_cmd(a, manifest.seed, &out)?,
        Command::Correlate(a) => correlate(a, manifest.require_seed()?, &out)?,
    }
    let mut text = manifest.to_json();
    text.push('\n');
    out.write(MANIFEST_FILE, text)
}

fn gen_noise(a: &GenNoiseArgs, out: &Output) -> Result<()> {
    let m = a.noise.to_spec()?.build()?;
    out.write("noise_matrix.json", m.to_json() + "\n")
}

fn read_labels(path: &Path, k: usize) -> Result<Vec<usize>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let label: usize = t.parse().map_err(|_| parse_err(format!("`{t}` is not a class index")))?;
        if label >= k {
            return Err(parse_err(format!("label {label} out of range for {k} classes")));
        }
        labels.push(label);
    }
    Ok(labels)
}

fn corrupt(a: &CorruptArgs, seed: u64, out: &Output) -> Result<()> {
    let m = a.noise.to_spec()?.build()?;
    let clean = read_labels(&a.labels, m.k())?;
    let noisy = corrupt_labels(&clean, &m, &mut derive_stream(seed, &[0]))?;
    let text: String = noisy.iter().map(|l| format!("{l}\n")).collect();
    out.write("noisy_labels.txt", text)?;
    let pairs: Vec<(usize, usize)> = clean.into_iter().zip(noisy).collect();
    out.write("pairs.tsv", LabelPairSet::from_tuples(m.k(), &pairs)?.write_tsv())
}

fn estimate(a: &EstimateArgs, out: &Output) -> Result<()> {
    if !a.delimiter.is_ascii() {
        return Err(Error::invalid("the delimiter must be an ASCII character"));
    }
    let file = fs::File::open(&a.pairs).map_err(|e| Error::io(&a.pairs, e))?;
    let set = LabelPairSet::read(BufReader::new(file), a.k, a.delimiter as u8, &a.pairs.display().to_string())?;
    out.json("estimate.json", &estimate_noise_matrix(&set))
}

fn expected_error_cmd(a: &ExpectedErrorArgs, out: &Output) -> Result<()> {
    let grid = a.grid.to_grid()?;
    let noise = a.noise.spec_for_grid(grid.as_ref())?;
    let k = noise.k();
    let prior = a.scheme.to_prior(k)?;
    match grid {
        None => {
            let scheme = a.scheme.to_scheme(k)?;
            let report = expected_error(&noise.build()?, &scheme, Some(&prior))?;
            out.json("expected_error.json", &report)?;
            let csv = csv_bytes(|buf| {
                write_curve_csv(
                    &[crate::theory::CurvePoint {
                        grid_value: scheme.budget() as f64,
                        expected_se: report.total,
                    }],
                    buf,
                )
            })?;
            out.write("expected_error.csv", csv)
        }
        Some(grid) => {
            let scheme = grid_template_scheme(&a.scheme, k, &grid)?;
            let points = error_curve(&noise, &scheme, Some(&prior), &grid)?;
            out.write("curve.csv", csv_bytes(|buf| write_curve_csv(&points, buf))?)
        }
    }
}

/// On a sample-size grid the size flags may be omitted.
fn grid_template_scheme(s: &SchemeArgs, k: usize, grid: &Grid) -> Result<SamplingScheme> {
    match (grid, s.to_scheme(k)) {
        (Grid::SampleSizes(_), Err(_)) => Ok(match s.scheme {
            SchemeArg::Fixed => SamplingScheme::fixed_equal(k, 1),
            SchemeArg::Variable => SamplingScheme::Variable { total: 1 },
        }),
        (_, r) => r,
    }
}

fn simulation_template(a: &SimulateArgs, seed: u64, grid: Option<&Grid>) -> Result<SimulationConfig> {
    let (source, k) = match (a.noise.is_set(), a.corpus.load_main()?) {
        (true, Some(_)) => return Err(Error::invalid("give either a noise process or --corpus, not both")),
        (false, None) => return Err(Error::invalid("no pair source (--kind, --matrix or --corpus)")),
        (true, None) => {
            let noise = a.noise.spec_for_grid(grid)?;
            let k = noise.k();
            (
                SimulationSource::Synthetic {
                    noise,
                    prior: a.scheme.to_prior(k)?,
                },
                k,
            )
        }
        (false, Some((corpus, set))) => (
            SimulationSource::Corpus {
                pool: Arc::new(LabelPool::from_corpus(&corpus, set)?),
            },
            corpus.k(),
        ),
    };
    let scheme = match grid {
        Some(g) => grid_template_scheme(&a.scheme, k, g)?,
        None => a.scheme.to_scheme(k)?,
    };
    Ok(SimulationConfig::new(source, scheme, seed)
        .repetitions(a.repetitions)
        .replacement(a.replacement.into()))
}

fn simulate(a: &SimulateArgs, seed: u64, out: &Output) -> Result<()> {
    let config = simulation_template(a, seed, None)?.keep_per_repetition(true);
    let mut result = run_simulation(&config)?;
    let per_rep = result.per_repetition_se.take().unwrap_or_default();
    out.json("simulation.json", &result)?;
    let csv = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["repetition", "se"])?;
        for (r, se) in per_rep.iter().enumerate() {
            w.write_record([r.to_string(), fmt_f64(*se)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    out.write("simulation.csv", csv)
}

fn sweep_cmd(a: &SweepArgs, seed: u64, out: &Output) -> Result<()> {
    let grid = a.grid.to_grid()?.ok_or_else(|| Error::invalid("sweep needs --sizes or --epsilons"))?;
    let template = simulation_template(&a.sim, seed, Some(&grid))?;
    let rows = sweep(&template, &grid)?;
    out.write("sweep.csv", csv_bytes(|buf| write_sweep_csv(&rows, buf))?)
}

fn quality(a: &QualityArgs, out: &Output) -> Result<()> {
    let (corpus, set) = a.corpus.load_main()?.ok_or_else(|| Error::invalid("quality needs --corpus"))?;
    let non_entity = corpus.label_index(&a.non_entity)?;
    out.json("quality.json", &quality_report(&corpus, set, non_entity)?)
}

fn reference_matrix(source: &Source) -> Result<NoiseMatrix> {
    match source {
        Source::Blobs(spec) => spec.truth(),
        Source::Corpus { pool, .. } => {
            let est = estimate_noise_matrix(&pool.pair_set());
            if let Some(&i) = est.empty_rows().first() {
                return Err(Error::AbsentClass(i.to_string()));
            }
            Ok(est.to_training_matrix()?.0)
        }
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    label_names: &'a [String],
    clean_size: usize,
    noisy_size: usize,
    noise_layer: LayerArg,
    /// Rows of the estimate without clean instances, replaced by uniform rows.
    substituted_rows: Vec<usize>,
    selected_epoch: usize,
}

fn train_cmd(a: &TrainArgs, seed: u64, out: &Output) -> Result<()> {
    let source = a.source.load()?;
    let (pool, labels, blobs_test) = match &source {
        Source::Blobs(spec) => {
            let data = spec.generate(derive_seed(seed, &[0]))?;
            let names: Vec<String> = (0..spec.k()).map(|i| i.to_string()).collect();
            (data.pool, names, Some(data.test))
        }
        Source::Corpus { pool, labels } => (pool.clone(), labels.clone(), None),
    };
    let k = pool.k();
    let label_pool = pool.label_pool();
    let scheme = a.scheme.to_scheme(k)?;
    let idx = label_pool.indices(&scheme, Replacement::Without, &mut derive_stream(seed, &[1]))?;
    let clean = pool.clean_view().subset(&idx);
    let noisy = pool.noisy_view();
    let (layer, substituted) = match a.noise_layer {
        LayerArg::Estimated => {
            let (m, subst) = estimate_noise_matrix(&label_pool.select(&idx)).to_training_matrix()?;
            (Some(m), subst)
        }
        LayerArg::Reference => (Some(reference_matrix(&source)?), Vec::new()),
        LayerArg::None => (None, Vec::new()),
    };
    let dev = match &a.dev_corpus {
        Some(path) => Some(a.source.load_test(path, &labels)?),
        None => None,
    };
    let outcome = train(
        LinearSoftmaxModel::zeros(k, pool.clean_view().d()),
        &clean,
        &noisy,
        layer.as_ref(),
        dev.as_ref(),
        &a.params.config(derive_seed(seed, &[2])),
    )?;

    out.write("model.json", outcome.model.to_json() + "\n")?;
    if let Some(m) = &layer {
        out.write("noise_layer.json", m.to_json() + "\n")?;
    }
    let trace = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["epoch", "clean_loss", "noisy_loss", "dev_accuracy"])?;
        for e in &outcome.trace {
            w.write_record([
                e.epoch.to_string(),
                fmt_f64(e.clean_loss),
                e.noisy_loss.map(fmt_f64).unwrap_or_default(),
                e.dev_accuracy.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    out.write("trace.csv", trace)?;
    out.json(
        "train.json",
        &TrainSummary {
            label_names: &labels,
            clean_size: clean.len(),
            noisy_size: noisy.len(),
            noise_layer: a.noise_layer,
            substituted_rows: substituted,
            selected_epoch: outcome.selected_epoch,
        },
    )?;
    if let Some(test) = blobs_test {
        out.json("eval.json", &evaluate(&outcome.model, &test, None)?)?;
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, seed: Option<u64>, out: &Output) -> Result<()> {
    let text = fs::read_to_string(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model = LinearSoftmaxModel::from_json(&text)?;
    let (test, non_entity) = match &a.test_corpus {
        Some(path) => {
            let corpus = a.source.corpus.load(path, None)?;
            let ne = a.non_entity.as_deref().map(|t| corpus.label_index(t)).transpose()?;
            (PairedSet::from_corpus(&corpus, 0)?.clean_view().clone(), ne)
        }
        None => {
            let spec = match a.source.load()? {
                Source::Blobs(spec) => spec,
                Source::Corpus { .. } => return Err(Error::invalid("corpus evaluation needs --test-corpus")),
            };
            let seed = seed.ok_or_else(|| Error::invalid("the blobs test set is drawn from --seed"))?;
            let ne = a.non_entity.as_deref().map(parse_class_index).transpose()?;
            (spec.generate(derive_seed(seed, &[0]))?.test, ne)
        }
    };
    out.json("eval.json", &evaluate(&model, &test, non_entity)?)
}

fn parse_class_index(t: &str) -> Result<usize> {
    t.parse().map_err(|_| Error::invalid(format!("`{t}` is not a class index")))
}

#[derive(Serialize)]
struct CorrelationSummary {
    pearson: Option<f64>,
    scheme: SchemeArg,
    repetitions: usize,
}

fn correlate(a: &CorrelateArgs, seed: u64, out: &Output) -> Result<()> {
    let (source, metric) = match a.source.load()? {
        Source::Blobs(spec) => {
            let metric = match &a.non_entity {
                Some(t) => Metric::MicroF1 {
                    non_entity: parse_class_index(t)?,
                },
                None => Metric::Accuracy,
            };
            (ExperimentSource::Blobs(spec), metric)
        }
        Source::Corpus { pool, labels } => {
            let path = a
                .test_corpus
                .as_ref()
                .ok_or_else(|| Error::invalid("corpus sources need --test-corpus"))?;
            let test = a.source.load_test(path, &labels)?;
            let metric = match &a.non_entity {
                Some(t) => Metric::MicroF1 {
                    non_entity: labels
                        .iter()
                        .position(|l| l == t)
                        .ok_or_else(|| Error::invalid(format!("unknown tag `{t}`")))?,
                },
                None => Metric::Accuracy,
            };
            (ExperimentSource::Corpus { pool, test }, metric)
        }
    };
    let scheme = match a.scheme {
        SchemeArg::Fixed => SchemeKind::Fixed,
        SchemeArg::Variable => SchemeKind::Variable,
    };
    let mut setup = CorrelationSetup::new(source, scheme, a.sizes.clone(), seed);
    setup.repetitions = a.repetitions;
    setup.train = a.params.config(0);
    setup.fix_base_clean = a.fix_base_clean;
    setup.metric = metric;
    let table = correlation_experiment(&setup)?;
    out.write("correlation.csv", csv_bytes(|buf| write_correlation_csv(&table, buf))?)?;
    out.json(
        "correlation.json",
        &CorrelationSummary {
            pearson: table.pearson,
            scheme: a.scheme,
            repetitions: a.repetitions,
        },
    )
}

/// Resolves flags into a manifest.
pub fn manifest_from_cli(cli: &Cli) -> Result<ExperimentManifest> {
    let mut manifest = match (&cli.manifest, &cli.command) {
        (Some(_), Some(_)) => return Err(Error::invalid("give either --manifest or a subcommand, not both")),
        (None, None) => return Err(Error::invalid("no subcommand given (see --help)")),
        (Some(path), None) => ExperimentManifest::load(path)?,
        (None, Some(cmd)) => ExperimentManifest {
            seed: None,
            out_dir: PathBuf::from("."),
            command: cmd.clone(),
        },
    };
    if cli.seed.is_some() {
        manifest.seed = cli.seed;
    }
    if let Some(dir) = &cli.out_dir {
        manifest.out_dir = dir.clone();
    }
    Ok(manifest)
}

/// Parses, runs, and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run_cli(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

fn run_cli(cli: &Cli) -> Result<()> {
    let manifest = manifest_from_cli(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::io("<thread pool>", std::io::Error::other(e)))?;
    pool.install(|| execute(&manifest))
}

pub fn main() -> ExitCode {
    run(std::env::args_os())
}

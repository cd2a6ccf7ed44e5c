//! Estimating a noise matrix from paired clean/noisy labels.
//!
//! `M̃[i][j] = m_ij / n_i`, where `m_ij` counts pairs with clean label `i` and
//! noisy label `j` and `n_i` counts pairs with clean label `i`. Rows with
//! `n_i = 0` are all zero and flagged.

use std::io::BufRead;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ParallelCorpus;
use crate::error::{Error, Result};
use crate::noise::{NoiseMatrix, SquareMatrix};
use crate::sum::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPair {
    pub clean: usize,
    pub noisy: usize,
}

impl LabelPair {
    pub fn new(clean: usize, noisy: usize) -> Self {
        Self { clean, noisy }
    }
}

/// Multiset of `(clean, noisy)` pairs over `k` classes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelPairSet {
    k: usize,
    pairs: Vec<LabelPair>,
}

impl LabelPairSet {
    pub fn new(k: usize, pairs: Vec<LabelPair>) -> Result<Self> {
        for p in &pairs {
            check_label(p.clean, k)?;
            check_label(p.noisy, k)?;
        }
        Ok(Self { k, pairs })
    }

    pub fn from_tuples(k: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(k, pairs.iter().map(|&(c, n)| LabelPair::new(c, n)).collect())
    }

    pub fn empty(k: usize) -> Self {
        Self { k, pairs: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pairs(&self) -> &[LabelPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, pair: LabelPair) -> Result<()> {
        check_label(pair.clean, self.k)?;
        check_label(pair.noisy, self.k)?;
        self.pairs.push(pair);
        Ok(())
    }

    /// Reads `clean<delim>noisy` integer lines. A first line that does not
    /// parse as two integers is taken as a header.
    pub fn read<R: BufRead>(reader: R, k: usize, delimiter: u8, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut pairs = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(idx + 1, |p| p.line() as usize);
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line,
                message,
            };
            if record.len() != 2 {
                if record.len() == 1 && record[0].trim().is_empty() {
                    continue;
                }
                return Err(parse_err(format!("expected 2 columns, found {}", record.len())));
            }
            let parsed: Option<(usize, usize)> = record[0]
                .trim()
                .parse()
                .ok()
                .zip(record[1].trim().parse().ok());
            let (clean, noisy) = match parsed {
                Some(p) => p,
                None if idx == 0 => continue,
                None => return Err(parse_err(format!("non-integer pair `{}`", record.iter().collect::<Vec<_>>().join(" ")))),
            };
            for label in [clean, noisy] {
                if label >= k {
                    return Err(parse_err(format!("label {label} out of range for {k} classes")));
                }
            }
            pairs.push(LabelPair::new(clean, noisy));
        }
        Ok(Self { k, pairs })
    }

    pub fn write_tsv(&self) -> String {
        let mut out = String::from("clean\tnoisy\n");
        for p in &self.pairs {
            out.push_str(&format!("{}\t{}\n", p.clean, p.noisy));
        }
        out
    }
}

fn check_label(label: usize, k: usize) -> Result<()> {
    if label < k {
        Ok(())
    } else {
        Err(Error::LabelOutOfRange { label, k })
    }
}

/// Transition counts `m_ij` and clean-class totals `n_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    pub k: usize,
    /// Row-major `k × k`.
    pub transitions: Vec<u64>,
    pub per_class: Vec<u64>,
}

impl TransitionCounts {
    pub fn transition(&self, i: usize, j: usize) -> u64 {
        self.transitions[i * self.k + j]
    }
}

pub fn count_matrix(s: &LabelPairSet) -> TransitionCounts {
    let k = s.k;
    let mut transitions = vec![0u64; k * k];
    let mut per_class = vec![0u64; k];
    for p in &s.pairs {
        transitions[p.clean * k + p.noisy] += 1;
        per_class[p.clean] += 1;
    }
    TransitionCounts {
        k,
        transitions,
        per_class,
    }
}

/// Estimated transition matrix. Not necessarily row-stochastic: rows with no
/// observations are zero and listed in `empty_rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EstimateJson", into = "EstimateJson")]
pub struct Estimate {
    k: usize,
    data: Vec<f64>,
    empty_rows: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct EstimateJson {
    k: usize,
    rows: Vec<Vec<f64>>,
    empty_rows: Vec<usize>,
}

impl TryFrom<EstimateJson> for Estimate {
    type Error = Error;

    fn try_from(v: EstimateJson) -> Result<Self> {
        if v.rows.len() != v.k || v.rows.iter().any(|r| r.len() != v.k) {
            return Err(Error::invalid("estimate rows do not form a k x k matrix"));
        }
        Ok(Self {
            k: v.k,
            data: v.rows.into_iter().flatten().collect(),
            empty_rows: v.empty_rows,
        })
    }
}

impl From<Estimate> for EstimateJson {
    fn from(e: Estimate) -> Self {
        EstimateJson {
            k: e.k,
            rows: e.to_rows(),
            empty_rows: e.empty_rows,
        }
    }
}

impl Estimate {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn empty_rows(&self) -> &[usize] {
        &self.empty_rows
    }

    pub fn has_empty_rows(&self) -> bool {
        !self.empty_rows.is_empty()
    }

    /// Noise matrix usable as a fixed adaptation layer: empty rows become
    /// uniform. Returns the substituted rows alongside.
    pub fn to_training_matrix(&self) -> Result<(NoiseMatrix, Vec<usize>)> {
        let k = self.k;
        let mut rows = self.to_rows();
        for &i in &self.empty_rows {
            rows[i] = vec![1.0 / k as f64; k];
        }
        Ok((NoiseMatrix::from_rows(rows)?, self.empty_rows.clone()))
    }
}

impl SquareMatrix for Estimate {
    fn k(&self) -> usize {
        self.k
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }
}

pub fn estimate_from_counts(c: &TransitionCounts) -> Estimate {
    let k = c.k;
    let mut data = vec![0.0; k * k];
    let mut empty_rows = Vec::new();
    for i in 0..k {
        let n = c.per_class[i];
        if n == 0 {
            empty_rows.push(i);
            continue;
        }
        for j in 0..k {
            data[i * k + j] = c.transition(i, j) as f64 / n as f64;
        }
    }
    Estimate { k, data, empty_rows }
}

pub fn estimate_noise_matrix(s: &LabelPairSet) -> Estimate {
    estimate_from_counts(&count_matrix(s))
}

/// Squared Frobenius distance `Σ_ij (a_ij − b_ij)²`.
pub fn squared_error<A: SquareMatrix + ?Sized, B: SquareMatrix + ?Sized>(a: &A, b: &B) -> Result<f64> {
    let k = a.k();
    if b.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: b.k(),
        });
    }
    let mut acc = KahanSum::new();
    for i in 0..k {
        for j in 0..k {
            let d = a.get(i, j) - b.get(i, j);
            acc.add(d * d);
        }
    }
    Ok(acc.value())
}

/// How the clean/noisy pair sample is drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingScheme {
    /// Exactly `per_class[i]` instances with clean label `i`.
    Fixed { per_class: Vec<usize> },
    /// `total` instances from the whole population; class counts are random.
    Variable { total: usize },
}

impl SamplingScheme {
    pub fn fixed_equal(k: usize, per_class: usize) -> Self {
        SamplingScheme::Fixed {
            per_class: vec![per_class; k],
        }
    }

    pub fn budget(&self) -> usize {
        match self {
            SamplingScheme::Fixed { per_class } => per_class.iter().sum(),
            SamplingScheme::Variable { total } => *total,
        }
    }

    /// Same scheme kind with every per-class count (Fixed) or the total
    /// (Variable) set to `size`.
    pub fn with_size(&self, size: usize) -> Self {
        match self {
            SamplingScheme::Fixed { per_class } => SamplingScheme::Fixed {
                per_class: vec![size; per_class.len()],
            },
            SamplingScheme::Variable { .. } => SamplingScheme::Variable { total: size },
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, SamplingScheme::Fixed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    #[default]
    With,
    Without,
}

/// Finite population of labelled pairs indexed by clean class.
#[derive(Debug, Clone)]
pub struct LabelPool {
    k: usize,
    pairs: Vec<LabelPair>,
    by_class: Vec<Vec<usize>>,
}

impl LabelPool {
    pub fn new(set: LabelPairSet) -> Self {
        let mut by_class = vec![Vec::new(); set.k];
        for (idx, p) in set.pairs.iter().enumerate() {
            by_class[p.clean].push(idx);
        }
        Self {
            k: set.k,
            pairs: set.pairs,
            by_class,
        }
    }

    pub fn from_corpus(corpus: &ParallelCorpus, label_set: usize) -> Result<Self> {
        Ok(Self::new(corpus.pairs(label_set)?))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, idx: usize) -> LabelPair {
        self.pairs[idx]
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.by_class[class].len()
    }

    pub fn to_pair_set(&self) -> LabelPairSet {
        LabelPairSet {
            k: self.k,
            pairs: self.pairs.clone(),
        }
    }

    /// Instance indices for a Fixed sample, grouped by class in class order.
    pub fn fixed_indices<R: Rng + ?Sized>(
        &self,
        per_class: &[usize],
        replacement: Replacement,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if per_class.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: per_class.len(),
            });
        }
        let mut out = Vec::with_capacity(per_class.iter().sum());
        for (class, (&want, members)) in per_class.iter().zip(&self.by_class).enumerate() {
            if want == 0 {
                continue;
            }
            let available = members.len();
            if available == 0 || (replacement == Replacement::Without && want > available) {
                return Err(Error::InsufficientInstances {
                    class,
                    requested: want,
                    available,
                });
            }
            draw(members, want, replacement, rng, &mut out);
        }
        Ok(out)
    }

    /// Instance indices for a Variable sample of `total` draws.
    pub fn variable_indices<R: Rng + ?Sized>(
        &self,
        total: usize,
        replacement: Replacement,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if total == 0 {
            return Ok(Vec::new());
        }
        let n = self.pairs.len();
        if n == 0 || (replacement == Replacement::Without && total > n) {
            return Err(Error::invalid(format!(
                "cannot draw {total} instances from a population of {n}"
            )));
        }
        Ok(match replacement {
            Replacement::With => (0..total).map(|_| rng.random_range(0..n)).collect(),
            Replacement::Without => index::sample(rng, n, total).into_vec(),
        })
    }

    pub fn indices<R: Rng + ?Sized>(
        &self,
        scheme: &SamplingScheme,
        replacement: Replacement,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        match scheme {
            SamplingScheme::Fixed { per_class } => self.fixed_indices(per_class, replacement, rng),
            SamplingScheme::Variable { total } => self.variable_indices(*total, replacement, rng),
        }
    }

    pub fn select(&self, indices: &[usize]) -> LabelPairSet {
        LabelPairSet {
            k: self.k,
            pairs: indices.iter().map(|&i| self.pairs[i]).collect(),
        }
    }
}

fn draw<R: Rng + ?Sized>(
    members: &[usize],
    want: usize,
    replacement: Replacement,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    match replacement {
        Replacement::With => {
            out.extend((0..want).map(|_| members[rng.random_range(0..members.len())]));
        }
        Replacement::Without => {
            out.extend(index::sample(rng, members.len(), want).into_iter().map(|i| members[i]));
        }
    }
}

/// Draws `per_class[i]` pairs with clean label `i` from the pool.
pub fn fixed_sample<R: Rng + ?Sized>(
    pool: &LabelPool,
    per_class: &[usize],
    replacement: Replacement,
    rng: &mut R,
) -> Result<LabelPairSet> {
    let idx = pool.fixed_indices(per_class, replacement, rng)?;
    Ok(pool.select(&idx))
}

/// Draws `total` pairs uniformly from the whole pool.
pub fn variable_sample<R: Rng + ?Sized>(
    pool: &LabelPool,
    total: usize,
    replacement: Replacement,
    rng: &mut R,
) -> Result<LabelPairSet> {
    let idx = pool.variable_indices(total, replacement, rng)?;
    Ok(pool.select(&idx))
}

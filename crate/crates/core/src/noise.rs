//! Noise-process data model.
//!
//! A noise process maps a clean label `y = i` to a noisy label `ŷ = j` with
//! probability `M[i][j]`. [`NoiseMatrix`] holds such a row-stochastic matrix;
//! the generators build the synthetic processes used throughout the crate
//! (uniform, single-flip and the MNIST multi-flip pattern).

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::compensated_sum;

/// Row sums must be within this distance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Why a candidate matrix is not a valid noise process.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub defect: Defect,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Defect {
    /// Fewer than two classes.
    TooFewClasses(usize),
    /// Row has `len` entries instead of `k`.
    RaggedRow { len: usize, k: usize },
    NotFinite { col: usize },
    NegativeEntry { col: usize, value: f64 },
    EntryAboveOne { col: usize, value: f64 },
    RowSum(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = self.row;
        match &self.defect {
            Defect::TooFewClasses(k) => write!(f, "need at least 2 classes, got {k}"),
            Defect::RaggedRow { len, k } => write!(f, "row {row} has {len} entries, expected {k}"),
            Defect::NotFinite { col } => write!(f, "entry ({row}, {col}) is not finite"),
            Defect::NegativeEntry { col, value } => {
                write!(f, "entry ({row}, {col}) = {value} is negative")
            }
            Defect::EntryAboveOne { col, value } => {
                write!(f, "entry ({row}, {col}) = {value} exceeds 1")
            }
            Defect::RowSum(s) => write!(f, "row {row} sums to {s}"),
        }
    }
}

impl std::error::Error for Violation {}

/// Checks row-stochasticity and entry range, reporting the first offending row.
pub fn validate<R: AsRef<[f64]>>(rows: &[R]) -> Result<(), Violation> {
    let k = rows.len();
    if k < 2 {
        return Err(Violation {
            row: 0,
            defect: Defect::TooFewClasses(k),
        });
    }
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        let fail = |defect| Err(Violation { row: i, defect });
        if row.len() != k {
            return fail(Defect::RaggedRow { len: row.len(), k });
        }
        if let Some(col) = row.iter().position(|x| !x.is_finite()) {
            return fail(Defect::NotFinite { col });
        }
        if let Some(col) = row.iter().position(|&x| x < 0.0) {
            return fail(Defect::NegativeEntry { col, value: row[col] });
        }
        if let Some(col) = row.iter().position(|&x| x > 1.0) {
            return fail(Defect::EntryAboveOne { col, value: row[col] });
        }
        let s = compensated_sum(row.iter().copied());
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return fail(Defect::RowSum(s));
        }
    }
    Ok(())
}

/// Read access shared by true noise matrices and (possibly non-stochastic) estimates.
pub trait SquareMatrix {
    fn k(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;
}

/// A `k × k` row-stochastic transition matrix, `entries[i][j] = p(ŷ=j | y=i)`.
///
/// Stored dense and row-major. Serializes as `{"k": .., "rows": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct NoiseMatrix {
    k: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixJson {
    k: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<MatrixJson> for NoiseMatrix {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        if value.rows.len() != value.k {
            return Err(Error::DimensionMismatch {
                expected: value.k,
                actual: value.rows.len(),
            });
        }
        NoiseMatrix::from_rows(value.rows)
    }
}

impl From<NoiseMatrix> for MatrixJson {
    fn from(m: NoiseMatrix) -> Self {
        MatrixJson {
            k: m.k,
            rows: m.to_rows(),
        }
    }
}

impl NoiseMatrix {
    /// Validates and wraps the given rows exactly as supplied.
    pub fn from_rows<R: AsRef<[f64]>>(rows: impl AsRef<[R]>) -> Result<Self> {
        let rows = rows.as_ref();
        validate(rows)?;
        Ok(Self {
            k: rows.len(),
            data: rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect(),
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Violation {
                row: 0,
                defect: Defect::TooFewClasses(k),
            }
            .into());
        }
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Ok(Self { k, data })
    }

    /// Builds from generator output, rescaling each row to absorb rounding.
    fn normalized(k: usize, mut data: Vec<f64>) -> Result<Self> {
        for row in data.chunks_mut(k) {
            let s = compensated_sum(row.iter().copied());
            if s != 1.0 && s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
        let m = Self { k, data };
        validate(&m.to_rows())?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.k)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("noise matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl SquareMatrix for NoiseMatrix {
    fn k(&self) -> usize {
        self.k
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }
}

/// Noise level `ε ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&epsilon) {
            Ok(Self(epsilon))
        } else {
            Err(Error::invalid(format!("noise level {epsilon} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NoiseLevel {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<NoiseLevel> for f64 {
    fn from(value: NoiseLevel) -> Self {
        value.0
    }
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s = compensated_sum(probs.iter().copied());
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Distribution `P(y)` over the `k` clean classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassPrior(Vec<f64>);

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("class prior needs at least one class"));
        }
        check_distribution(&probs, "class prior")?;
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Normalized frequencies. The largest class absorbs the rounding residual.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("cannot build a class prior from zero counts"));
        }
        let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let (largest, _) = counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)))
            .expect("nonempty");
        let rest = compensated_sum(
            probs
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != largest)
                .map(|(_, p)| *p),
        );
        probs[largest] = 1.0 - rest;
        Self::new(probs)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ClassPrior {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ClassPrior> for Vec<f64> {
    fn from(value: ClassPrior) -> Self {
        value.0
    }
}

/// Point distribution over the `k` classes, e.g. a model posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_distribution(&probs, "probability vector")?;
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn one_hot(k: usize, i: usize) -> Result<Self> {
        if i >= k {
            return Err(Error::LabelOutOfRange { label: i, k });
        }
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// First index of the maximum value.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Single-flip configuration: each listed source class flips to one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlipSpecJson", into = "FlipSpecJson")]
pub struct FlipSpec {
    k: usize,
    targets: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct FlipSpecJson {
    k: usize,
    flips: Vec<(usize, usize)>,
}

impl TryFrom<FlipSpecJson> for FlipSpec {
    type Error = Error;

    fn try_from(value: FlipSpecJson) -> Result<Self> {
        FlipSpec::new(value.k, &value.flips)
    }
}

impl From<FlipSpec> for FlipSpecJson {
    fn from(value: FlipSpec) -> Self {
        FlipSpecJson {
            k: value.k,
            flips: value.flips(),
        }
    }
}

impl FlipSpec {
    pub fn new(k: usize, flips: &[(usize, usize)]) -> Result<Self> {
        let mut targets = vec![None; k];
        for &(src, dst) in flips {
            if src >= k || dst >= k {
                return Err(Error::invalid(format!("flip {src}->{dst} out of range for k={k}")));
            }
            if src == dst {
                return Err(Error::invalid(format!("flip {src}->{dst} maps a class to itself")));
            }
            if targets[src].replace(dst).is_some() {
                return Err(Error::invalid(format!("class {src} has more than one flip target")));
            }
        }
        Ok(Self { k, targets })
    }

    /// The digit confusions used for single-flip noise on MNIST:
    /// 2→7, 3→8, 5↔6, 7→1.
    pub fn mnist_pairs() -> Self {
        Self::new(10, &[(2, 7), (3, 8), (5, 6), (6, 5), (7, 1)]).expect("valid preset")
    }

    /// Every class `i` flips to `(i + 1) mod k`.
    pub fn cyclic(k: usize) -> Result<Self> {
        let flips: Vec<_> = (0..k).map(|i| (i, (i + 1) % k)).collect();
        Self::new(k, &flips)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn target(&self, source: usize) -> Option<usize> {
        self.targets.get(source).copied().flatten()
    }

    pub fn flips(&self) -> Vec<(usize, usize)> {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|j| (i, j)))
            .collect()
    }
}

/// Uniform noise: `1 − ε` on the diagonal, `ε / (k − 1)` elsewhere.
pub fn uniform_noise(k: usize, epsilon: NoiseLevel) -> Result<NoiseMatrix> {
    if k < 2 {
        return Err(Error::invalid(format!("uniform noise needs k >= 2, got {k}")));
    }
    let eps = epsilon.value();
    let off = eps / (k - 1) as f64;
    let data = (0..k * k)
        .map(|idx| if idx / k == idx % k { 1.0 - eps } else { off })
        .collect();
    NoiseMatrix::normalized(k, data)
}

/// Single-flip noise: flipped rows keep `1 − ε` and send `ε` to their target;
/// other rows are noise free.
pub fn single_flip_noise(k: usize, epsilon: NoiseLevel, spec: &FlipSpec) -> Result<NoiseMatrix> {
    if spec.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: spec.k(),
        });
    }
    if k < 2 {
        return Err(Error::invalid(format!("single-flip noise needs k >= 2, got {k}")));
    }
    let eps = epsilon.value();
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        match spec.target(i) {
            Some(j) => {
                data[i * k + i] = 1.0 - eps;
                data[i * k + j] = eps;
            }
            None => data[i * k + i] = 1.0,
        }
    }
    NoiseMatrix::normalized(k, data)
}

/// The ten-class multi-flip pattern modelled on digit similarity.
pub fn multi_flip_mnist(epsilon: NoiseLevel) -> Result<NoiseMatrix> {
    let e = epsilon.value();
    let keep = 1.0 - e;
    // (row, [(col, share of ε)])
    let pattern: [&[(usize, f64)]; 10] = [
        &[(8, 1.0 / 2.0), (9, 1.0 / 2.0)],
        &[(7, 1.0)],
        &[(0, 1.0 / 3.0), (3, 2.0 / 3.0)],
        &[(2, 1.0 / 2.0), (8, 1.0 / 2.0)],
        &[(0, 1.0 / 5.0), (1, 1.0 / 5.0), (5, 1.0 / 5.0), (6, 1.0 / 5.0), (8, 1.0 / 5.0)],
        &[(6, 1.0 / 2.0), (8, 1.0 / 2.0)],
        &[(5, 1.0 / 2.0), (8, 1.0 / 2.0)],
        &[(1, 2.0 / 6.0), (4, 1.0 / 6.0), (9, 3.0 / 6.0)],
        &[(2, 3.0 / 4.0), (9, 1.0 / 4.0)],
        &[(0, 1.0 / 3.0), (4, 1.0 / 3.0), (8, 1.0 / 3.0)],
    ];
    let mut data = vec![0.0; 100];
    for (i, targets) in pattern.iter().enumerate() {
        data[i * 10 + i] = keep;
        for &(j, share) in targets.iter() {
            data[i * 10 + j] = e * share;
        }
    }
    NoiseMatrix::normalized(10, data)
}

/// Draws a noisy label for every clean label from the matching row of `m`.
pub fn corrupt_labels<R: Rng + ?Sized>(
    labels: &[usize],
    m: &NoiseMatrix,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = m.k();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, k });
    }
    let sampler = RowSampler::new(m);
    Ok(labels.iter().map(|&y| sampler.sample(y, rng)).collect())
}

/// Inverse-CDF categorical sampling from the rows of a noise matrix.
#[derive(Debug, Clone)]
pub struct RowSampler {
    k: usize,
    cumulative: Vec<f64>,
    last_positive: Vec<usize>,
}

impl RowSampler {
    pub fn new(m: &NoiseMatrix) -> Self {
        let k = m.k();
        let mut cumulative = Vec::with_capacity(k * k);
        let mut last_positive = Vec::with_capacity(k);
        for row in m.rows() {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cumulative.push(acc);
            }
            last_positive.push(row.iter().rposition(|&p| p > 0.0).unwrap_or(0));
        }
        Self {
            k,
            cumulative,
            last_positive,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, clean: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.cumulative[clean * self.k..(clean + 1) * self.k];
        let last = self.last_positive[clean];
        row[..last].iter().position(|&c| u < c).unwrap_or(last)
    }
}

/// `out[j] = Σ_i m[i][j] · clean[i]` without allocation or validation.
pub(crate) fn compose_into(clean: &[f64], m: &NoiseMatrix, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (p, row) in clean.iter().zip(m.rows()) {
        for (o, &mij) in out.iter_mut().zip(row) {
            *o += p * mij;
        }
    }
}

/// Pushes a clean-label posterior through the noise process.
pub fn compose_noisy_posterior(clean: &ProbabilityVector, m: &NoiseMatrix) -> Result<ProbabilityVector> {
    if clean.len() != m.k() {
        return Err(Error::DimensionMismatch {
            expected: m.k(),
            actual: clean.len(),
        });
    }
    let mut out = vec![0.0; m.k()];
    compose_into(clean.as_slice(), m, &mut out);
    Ok(ProbabilityVector::new_unchecked(out))
}

/// Serializable description of a noise process, parameterized by `ε` where
/// the kind has one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Uniform { k: usize, epsilon: f64 },
    SingleFlip { k: usize, epsilon: f64, flips: Vec<(usize, usize)> },
    MultiFlipMnist { epsilon: f64 },
    Explicit { matrix: NoiseMatrix },
}

impl NoiseSpec {
    pub fn build(&self) -> Result<NoiseMatrix> {
        match self {
            NoiseSpec::Uniform { k, epsilon } => uniform_noise(*k, NoiseLevel::new(*epsilon)?),
            NoiseSpec::SingleFlip { k, epsilon, flips } => {
                single_flip_noise(*k, NoiseLevel::new(*epsilon)?, &FlipSpec::new(*k, flips)?)
            }
            NoiseSpec::MultiFlipMnist { epsilon } => multi_flip_mnist(NoiseLevel::new(*epsilon)?),
            NoiseSpec::Explicit { matrix } => Ok(matrix.clone()),
        }
    }

    /// Same kind at a different noise level. Explicit matrices have none.
    pub fn with_epsilon(&self, eps: f64) -> Result<Self> {
        NoiseLevel::new(eps)?;
        Ok(match self {
            NoiseSpec::Uniform { k, .. } => NoiseSpec::Uniform { k: *k, epsilon: eps },
            NoiseSpec::SingleFlip { k, flips, .. } => NoiseSpec::SingleFlip {
                k: *k,
                epsilon: eps,
                flips: flips.clone(),
            },
            NoiseSpec::MultiFlipMnist { .. } => NoiseSpec::MultiFlipMnist { epsilon: eps },
            NoiseSpec::Explicit { .. } => {
                return Err(Error::invalid("an explicit matrix has no noise level to vary"))
            }
        })
    }

    pub fn k(&self) -> usize {
        match self {
            NoiseSpec::Uniform { k, .. } | NoiseSpec::SingleFlip { k, .. } => *k,
            NoiseSpec::MultiFlipMnist { .. } => 10,
            NoiseSpec::Explicit { matrix } => matrix.k(),
        }
    }
}
